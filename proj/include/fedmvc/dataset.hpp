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

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmvc/errors.hpp"
#include "fedmvc/numerics.hpp"
#include "fedmvc/protocol.hpp"

// On-disk dataset layout:
//
//   DIR/meta.json        {"num_views": M, "view_dims": [D_1, ...], "num_samples": N}
//   DIR/view_<m>.csv     m = 1..M; "id,x1,...,xD" header then one sample per line
//   DIR/labels.csv       optional; "id,label"
//
// A sample's presence in view m is its presence in view_<m>.csv.

namespace fedmvc {

using LabelMap = std::map<SampleId, int>;

struct LoadedDataset {
  MultiViewData data;
  std::optional<LabelMap> labels;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? comma : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::string where(const std::filesystem::path& file, std::size_t line) {
  return file.string() + ":" + std::to_string(line);
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Reads a numeric CSV whose first column is an integer id. A first line whose
// id column is not an integer is taken as a header.
template <typename RowFn>
void read_id_csv(const std::filesystem::path& file, RowFn&& on_row) {
  std::ifstream in(file);
  if (!in) throw ParseError("cannot open " + file.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    const auto fields = split_csv(view);
    SampleId id = 0;
    if (!parse_number(fields[0], id)) {
      if (line_no == 1) continue;
      throw ParseError(where(file, line_no) + ": bad sample id '" + std::string(fields[0]) + "'");
    }
    on_row(id, fields, line_no);
  }
}

}  // namespace detail

inline LabelMap read_labels_csv(const std::filesystem::path& file) {
  LabelMap labels;
  detail::read_id_csv(file, [&](SampleId id, const std::vector<std::string_view>& f, std::size_t line) {
    int label = 0;
    if (f.size() != 2 || !detail::parse_number(f[1], label)) {
      throw ParseError(detail::where(file, line) + ": expected 'id,label'");
    }
    if (!labels.emplace(id, label).second) {
      throw SchemaError(detail::where(file, line) + ": duplicate id " + std::to_string(id));
    }
  });
  return labels;
}

inline void write_labels_csv(const std::filesystem::path& file, const LabelMap& labels) {
  std::ofstream out(file);
  if (!out) throw Error("cannot open " + file.string() + " for writing");
  out << "id,label\n";
  for (const auto& [id, label] : labels) out << id << ',' << label << '\n';
  if (!out) throw Error("failed writing " + file.string());
}

inline std::filesystem::path view_file(const std::filesystem::path& dir, std::size_t view) {
  return dir / ("view_" + std::to_string(view + 1) + ".csv");
}

inline void write_dataset(const std::filesystem::path& dir, const MultiViewData& data,
                          const std::optional<LabelMap>& labels = std::nullopt) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["num_views"] = data.num_views();
  std::vector<Index> dims;
  for (const auto& v : data.views) dims.push_back(v.width());
  meta["view_dims"] = dims;
  meta["num_samples"] = data.global_ids().size();
  {
    std::ofstream out(dir / "meta.json");
    if (!out) throw Error("cannot write " + (dir / "meta.json").string());
    out << meta.dump(2) << '\n';
  }
  for (std::size_t m = 0; m < data.num_views(); ++m) {
    const auto& v = data.views[m];
    std::ofstream out(view_file(dir, m));
    if (!out) throw Error("cannot write " + view_file(dir, m).string());
    out << "id";
    for (Index c = 0; c < v.width(); ++c) out << ",x" << (c + 1);
    out << '\n';
    for (Index r = 0; r < v.size(); ++r) {
      out << v.ids[r];
      for (Index c = 0; c < v.width(); ++c) out << ',' << detail::format_double(v.x(r, c));
      out << '\n';
    }
    if (!out) throw Error("failed writing " + view_file(dir, m).string());
  }
  if (labels) write_labels_csv(dir / "labels.csv", *labels);
}

inline LoadedDataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw ParseError("dataset directory " + dir.string() + " does not exist");
  }
  const auto meta_path = dir / "meta.json";
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw ParseError("missing " + meta_path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(meta_path.string() + ": " + e.what());
  }
  std::size_t num_views = 0;
  std::vector<Index> view_dims;
  std::optional<std::size_t> num_samples;
  try {
    num_views = meta.at("num_views").get<std::size_t>();
    view_dims = meta.at("view_dims").get<std::vector<Index>>();
    if (meta.contains("num_samples")) num_samples = meta["num_samples"].get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(meta_path.string() + ": " + e.what());
  }
  if (num_views < 1 || view_dims.size() != num_views) {
    throw SchemaError(meta_path.string() + ": view_dims must list num_views entries");
  }

  LoadedDataset out;
  for (std::size_t m = 0; m < num_views; ++m) {
    const auto file = view_file(dir, m);
    std::vector<SampleId> ids;
    std::vector<double> values;
    std::unordered_set<SampleId> seen;
    const auto width = static_cast<std::size_t>(view_dims[m]);
    detail::read_id_csv(file, [&](SampleId id, const std::vector<std::string_view>& f,
                                  std::size_t line) {
      if (f.size() != width + 1) {
        throw SchemaError(detail::where(file, line) + ": expected " + std::to_string(width) +
                          " features, found " + std::to_string(f.size() - 1));
      }
      if (!seen.insert(id).second) {
        throw SchemaError(detail::where(file, line) + ": duplicate id " + std::to_string(id));
      }
      for (std::size_t c = 1; c < f.size(); ++c) {
        double v = 0.0;
        if (!detail::parse_number(f[c], v) || !std::isfinite(v)) {
          throw ParseError(detail::where(file, line) + ": bad value '" + std::string(f[c]) + "'");
        }
        values.push_back(v);
      }
      ids.push_back(id);
    });
    ViewDataset view;
    view.view = static_cast<int>(m);
    view.ids = std::move(ids);
    view.x = Eigen::Map<const Matrix>(values.data(), static_cast<Index>(view.ids.size()),
                                      static_cast<Index>(width));
    out.data.views.push_back(std::move(view));
  }
  if (num_samples && *num_samples != out.data.global_ids().size()) {
    throw SchemaError(meta_path.string() + ": num_samples disagrees with the view files");
  }
  if (std::filesystem::exists(dir / "labels.csv")) out.labels = read_labels_csv(dir / "labels.csv");
  return out;
}

}  // namespace fedmvc
