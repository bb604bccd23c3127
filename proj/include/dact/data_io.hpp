// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dact/pose_features.hpp"
#include "json.hpp"

namespace dact {

inline constexpr int kNumClasses = 16;

// ---------------------------------------------------------------------------
// Keypoint streams (JSON Lines, one frame per line)

/// Streaming reader. Frames come out in file order; each (video_id, camera)
/// stream must have strictly increasing frame_index.
class KeypointReader {
 public:
  explicit KeypointReader(const std::filesystem::path& path);

  /// Next frame, or nullopt at end of file. Throws ParseError / SchemaError.
  std::optional<KeypointFrame> next();

 private:
  std::ifstream in_;
  std::size_t line_no_ = 0;
  std::map<std::pair<std::string, int>, std::int64_t> last_index_;
};

std::vector<KeypointFrame> read_keypoints(const std::filesystem::path& path);
void write_keypoints(const std::filesystem::path& path, const std::vector<KeypointFrame>& frames);

KeypointFrame keypoint_frame_from_json(const nlohmann::json& j);
nlohmann::json keypoint_frame_to_json(const KeypointFrame& frame);

// ---------------------------------------------------------------------------
// Segment feature container ("STEM")
//
//   "STEM" | version u16 | feat_dim u32 | segment_len u32 | stride u32 |
//   num_segments u32 | num_segments * feat_dim float32, row-major
//
// All integers and floats little-endian. The same container carries
// spatio-temporal embeddings (segment_len = T_c), per-frame pose features
// and per-frame class probabilities (segment_len = stride = 1).

inline constexpr std::uint16_t kStemVersion = 1;

struct StemHeader {
  std::uint16_t version = kStemVersion;
  std::uint32_t feat_dim = 0;
  std::uint32_t segment_len = 1;
  std::uint32_t stride = 1;
  std::uint32_t num_segments = 0;

  /// Frames spanned by the segments: (num_segments - 1) * stride + segment_len.
  std::int64_t num_frames() const;
};

struct EmbeddingSegment {
  std::int64_t start_frame = 0;
  std::vector<float> values;
};

struct EmbeddingFile {
  StemHeader header;
  std::vector<EmbeddingSegment> segments;
};

EmbeddingFile read_embeddings(const std::filesystem::path& path);

/// Header num_segments is taken from segments.size(); every segment must have
/// feat_dim values and start at index * stride.
void write_embeddings(const std::filesystem::path& path, StemHeader header,
                      const std::vector<EmbeddingSegment>& segments);

// ---------------------------------------------------------------------------
// Segmentation

struct SegmentIndex {
  std::int64_t segment_len = 64;
  std::int64_t stride = 1;
  std::int64_t num_frames = 0;
};

/// Half-open frame ranges [start, end) of every segment fully inside the video.
std::vector<std::pair<std::int64_t, std::int64_t>> enumerate_segments(const SegmentIndex& idx);

/// Most frequent label; ties go to the smallest class id.
int segment_majority_label(std::span<const int> frame_labels);

// ---------------------------------------------------------------------------
// Annotations and predictions (CSV)

struct AnnotationRecord {
  std::string video_id;
  int class_id = 0;
  std::int64_t start_frame = 0;  ///< inclusive
  std::int64_t end_frame = 0;    ///< exclusive

  void validate() const;
};

/// `video_id,class_id,start_frame,end_frame`; an optional header line is skipped.
std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path,
                       const std::vector<AnnotationRecord>& records);

/// Converts challenge-style times in seconds to frames.
AnnotationRecord annotation_from_seconds(std::string video_id, int class_id, double start_s,
                                         double end_s, double fps);

/// Per-frame class labels; frames outside every record are class 0.
std::vector<int> frame_labels(std::int64_t num_frames, const std::vector<AnnotationRecord>& records);

struct PredictionRecord {
  std::string video_id;
  int class_id = 0;
  std::int64_t start_frame = 0;
  std::int64_t end_frame = 0;
  double peak_height = 0.0;
};

/// `video_id,class_id,start_frame,end_frame,peak_height`.
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);
void write_predictions(const std::filesystem::path& path,
                       const std::vector<PredictionRecord>& records);

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "DCKP" | version u16 | config_len u32 | config JSON bytes | step u64 |
//   num_tensors u32 | per tensor: name_len u16, name, rank u32, dims u32[rank],
//   values float64[prod(dims)]

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json config;
  std::uint64_t step = 0;
  std::vector<NamedTensor> tensors;
};

/// Maps a config snapshot to the tensor shapes it implies (name -> shape).
using ShapeSchema = std::function<std::map<std::string, std::vector<std::uint32_t>>(
    const nlohmann::json& config)>;

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// When schema is given, every expected tensor must appear exactly once with
/// the expected shape (SchemaError / ShapeError otherwise).
Checkpoint read_checkpoint(const std::filesystem::path& path, const ShapeSchema& schema = {});

// ---------------------------------------------------------------------------
// Filesystem helpers

/// Writes via a temporary sibling and renames over the target.
void write_file_atomically(const std::filesystem::path& path,
                           const std::function<void(std::ostream&)>& writer);

}  // namespace dact
