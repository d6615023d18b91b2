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

#include "fedmvc/alignment.hpp"
#include "fedmvc/autoencoder.hpp"
#include "fedmvc/client.hpp"
#include "fedmvc/clustering.hpp"
#include "fedmvc/dataset.hpp"
#include "fedmvc/errors.hpp"
#include "fedmvc/federation.hpp"
#include "fedmvc/log.hpp"
#include "fedmvc/metrics.hpp"
#include "fedmvc/numerics.hpp"
#include "fedmvc/protocol.hpp"
#include "fedmvc/report.hpp"
#include "fedmvc/server.hpp"
#include "fedmvc/synth.hpp"
#include "fedmvc/wire.hpp"
