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

#include <algorithm>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "fedmvc/clustering.hpp"
#include "fedmvc/errors.hpp"
#include "fedmvc/numerics.hpp"

namespace fedmvc {

using SampleId = std::int64_t;

// One client's raw features. Row r of `x` belongs to sample ids[r].
struct ViewDataset {
  Matrix x;
  std::vector<SampleId> ids;
  int view = 0;

  Index size() const { return x.rows(); }
  Index width() const { return x.cols(); }

  void validate() const {
    if (x.rows() < 1) throw ContractViolation("view " + std::to_string(view) + " is empty");
    if (static_cast<std::size_t>(x.rows()) != ids.size()) {
      throw ContractViolation("view " + std::to_string(view) + ": id count != row count");
    }
    std::unordered_set<SampleId> seen;
    for (SampleId id : ids) {
      if (!seen.insert(id).second) {
        throw ContractViolation("view " + std::to_string(view) + ": duplicate sample id " +
                                std::to_string(id));
      }
    }
    require_finite(x, "view data");
  }
};

struct MultiViewData {
  std::vector<ViewDataset> views;

  std::size_t num_views() const { return views.size(); }

  // Sorted union of ids over all views; this is the global row order.
  std::vector<SampleId> global_ids() const {
    std::vector<SampleId> all;
    for (const auto& v : views) all.insert(all.end(), v.ids.begin(), v.ids.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    return all;
  }
};

// Data the clients send up: embeddings and soft assignments, never raw rows.
struct ClientUpload {
  int view = 0;
  std::vector<SampleId> ids;
  Matrix z;
  SoftAssignment q;

  bool operator==(const ClientUpload& o) const {
    return view == o.view && ids == o.ids && same_matrix(z, o.z) && same_matrix(q, o.q);
  }
};

// K x (d_1 + ... + d_M); the column block of view m starts at offset(m).
struct GlobalPrototypes {
  Matrix c;
  std::vector<Index> view_dims;

  Index offset(std::size_t view) const {
    Index off = 0;
    for (std::size_t m = 0; m < view; ++m) off += view_dims.at(m);
    return off;
  }

  Matrix slice(std::size_t view) const {
    if (view >= view_dims.size()) throw ContractViolation("prototype slice: no such view");
    return c.middleCols(offset(view), view_dims[view]);
  }

  bool operator==(const GlobalPrototypes& o) const {
    return view_dims == o.view_dims && same_matrix(c, o.c);
  }
};

// Data the server sends down each epoch.
struct Broadcast {
  GlobalPrototypes prototypes;
  SoftAssignment p;              // N x K pseudo-labels, global row order
  std::vector<SampleId> ids;     // global row order

  bool operator==(const Broadcast& o) const {
    return prototypes == o.prototypes && ids == o.ids && same_matrix(p, o.p);
  }
};

}  // namespace fedmvc
