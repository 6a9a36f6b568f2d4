#pragma once

#include <cstddef>
#include <vector>

#include "rosetta/diffcore.hpp"
#include "rosetta/gatednet.hpp"

namespace rosetta {

// Samples as rows of `inputs`; labels index into the owning task's class list.
struct Dataset {
  Tensor inputs;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }

  // Rows [begin, begin + count) in order.
  Dataset slice(std::size_t begin, std::size_t count) const {
    if (begin > size() || count > size() - begin) fail(ErrorKind::OutOfRange, "dataset slice out of range");
    const auto d = inputs.cols();
    Dataset out{Tensor::zeros({count, d}), {}};
    for (std::size_t i = 0; i < count; ++i) {
      std::copy_n(&inputs.data[(begin + i) * d], d, &out.inputs.data[i * d]);
      out.labels.push_back(labels[begin + i]);
    }
    return out;
  }

  Dataset gather(const std::vector<std::size_t>& rows) const {
    const auto d = inputs.cols();
    Dataset out{Tensor::zeros({rows.size(), d}), {}};
    for (auto r : rows)
      if (r >= size()) fail(ErrorKind::OutOfRange, "dataset gather: row " + std::to_string(r) + " out of range");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(&inputs.data[rows[i] * d], d, &out.inputs.data[i * d]);
      out.labels.push_back(labels[rows[i]]);
    }
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct TaskData {
  TaskId task_id = 0;
  std::vector<ClassId> class_ids;
  Dataset train;
  Dataset val;

  friend bool operator==(const TaskData&, const TaskData&) = default;
};

}  // namespace rosetta
