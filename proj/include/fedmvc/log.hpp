/*
 * Copyright 2026 The fedmvc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace fedmvc {

// Library logger, writing to stderr. Verbosity comes from FEDDMVC_LOG
// (error | info | debug); unset means error.
inline std::shared_ptr<spdlog::logger> logger() {
  static const std::shared_ptr<spdlog::logger> instance = [] {
    auto l = spdlog::get("fedmvc");
    if (!l) l = spdlog::stderr_color_mt("fedmvc");
    l->set_pattern("[%H:%M:%S.%e] [%l] %v");
    spdlog::level::level_enum level = spdlog::level::err;
    if (const char* env = std::getenv("FEDDMVC_LOG")) {
      const std::string v(env);
      if (v == "info") level = spdlog::level::info;
      else if (v == "debug") level = spdlog::level::debug;
    }
    l->set_level(level);
    return l;
  }();
  return instance;
}

}  // namespace fedmvc
