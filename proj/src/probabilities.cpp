// SPDX-License-Identifier: Apache-2.0
#include "dact/probabilities.hpp"

#include <cmath>
#include <string>

#include "dact/data_io.hpp"
#include "dact/errors.hpp"

namespace dact {

void FrameProbabilities::validate(double tol) const {
  for (Eigen::Index n = 0; n < values.rows(); ++n) {
    double sum = 0.0;
    for (Eigen::Index k = 0; k < values.cols(); ++k) {
      const double v = values(n, k);
      if (!std::isfinite(v) || v < 0.0) {
        throw SchemaError("frame " + std::to_string(n) + ", class " + std::to_string(k) +
                          ": probability " + std::to_string(v) + " is not a non-negative number");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > tol) {
      throw SchemaError("frame " + std::to_string(n) + ": probabilities sum to " +
                        std::to_string(sum));
    }
  }
}

FrameProbabilities read_frame_probabilities(const std::filesystem::path& path) {
  const EmbeddingFile file = read_embeddings(path);
  if (file.header.segment_len != 1 || file.header.stride != 1) {
    throw SchemaError(path.string() + ": frame probabilities need segment_len = stride = 1");
  }
  FrameProbabilities fp;
  fp.values.resize(static_cast<Eigen::Index>(file.segments.size()), file.header.feat_dim);
  for (std::size_t n = 0; n < file.segments.size(); ++n) {
    for (std::uint32_t k = 0; k < file.header.feat_dim; ++k) {
      fp.values(static_cast<Eigen::Index>(n), k) = file.segments[n].values[k];
    }
  }
  // Stored as float32, so the tolerance matches single precision.
  try {
    fp.validate(1e-4);
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  return fp;
}

void write_frame_probabilities(const std::filesystem::path& path, const FrameProbabilities& fp) {
  StemHeader header;
  header.feat_dim = static_cast<std::uint32_t>(fp.num_classes());
  std::vector<EmbeddingSegment> rows(static_cast<std::size_t>(fp.num_frames()));
  for (std::size_t n = 0; n < rows.size(); ++n) {
    rows[n].start_frame = static_cast<std::int64_t>(n);
    rows[n].values.resize(header.feat_dim);
    for (std::uint32_t k = 0; k < header.feat_dim; ++k) {
      rows[n].values[k] = static_cast<float>(fp.values(static_cast<Eigen::Index>(n), k));
    }
  }
  write_embeddings(path, header, rows);
}

}  // namespace dact
