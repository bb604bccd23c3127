// SPDX-License-Identifier: Apache-2.0
#include "dact/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <sstream>

#include "dact/errors.hpp"

namespace dact {

namespace fs = std::filesystem;

namespace {

// Little-endian primitives ---------------------------------------------------

template <typename U>
void put_le(std::ostream& out, U value) {
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes, sizeof(U));
}

class ByteReader {
 public:
  ByteReader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  template <typename U>
  U get() {
    unsigned char bytes[sizeof(U)];
    read(reinterpret_cast<char*>(bytes), sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
    return value;
  }

  void read(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw TruncationError(what_ + ": file truncated");
    }
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
  std::string what_;
};

std::ifstream open_input(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw InputError("cannot open " + path.string());
  return in;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

template <typename T>
T parse_number(const std::string& s, std::size_t line, const char* field) {
  std::istringstream ss(s);
  T value{};
  ss >> value;
  if (ss.fail() || !ss.eof()) {
    throw ParseError(std::string("bad ") + field + " '" + s + "'", line);
  }
  return value;
}

// Reads CSV rows with the expected column count, skipping blanks and a header.
template <typename F>
void for_each_csv_row(const fs::path& path, std::size_t columns, const char* header_token,
                      F&& row) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    if (line_no == 1 && fields.size() > 1 && fields[1] == header_token) continue;
    if (fields.size() != columns) {
      throw ParseError("expected " + std::to_string(columns) + " columns, got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    row(fields, line_no);
  }
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Keypoints

KeypointFrame keypoint_frame_from_json(const nlohmann::json& j) {
  KeypointFrame frame;
  frame.video_id = j.at("video_id").get<std::string>();
  frame.camera = j.at("camera").get<int>();
  frame.frame_index = j.at("frame_index").get<std::int64_t>();
  if (frame.frame_index < 0) throw SchemaError("frame_index must be >= 0");
  const auto& joints = j.at("joints");
  if (!joints.is_array() || joints.size() != wholebody::kNumJoints) {
    throw SchemaError("expected " + std::to_string(wholebody::kNumJoints) + " joints, got " +
                      std::to_string(joints.is_array() ? joints.size() : 0));
  }
  for (std::size_t i = 0; i < wholebody::kNumJoints; ++i) {
    const auto& jt = joints[i];
    if (!jt.is_array() || jt.size() != 3) {
      throw SchemaError("joint " + std::to_string(i) + " must be [x, y, c]");
    }
    Keypoint kp{jt[0].get<double>(), jt[1].get<double>(), jt[2].get<double>()};
    if (!std::isfinite(kp.x) || !std::isfinite(kp.y)) {
      throw SchemaError("joint " + std::to_string(i) + " has non-finite coordinates");
    }
    if (!(kp.c >= 0.0 && kp.c <= 1.0)) {
      throw SchemaError("joint " + std::to_string(i) + " confidence outside [0, 1]");
    }
    frame.joints[i] = kp;
  }
  return frame;
}

nlohmann::json keypoint_frame_to_json(const KeypointFrame& frame) {
  nlohmann::json joints = nlohmann::json::array();
  for (const auto& kp : frame.joints) joints.push_back({kp.x, kp.y, kp.c});
  return nlohmann::json{{"video_id", frame.video_id},
                        {"camera", frame.camera},
                        {"frame_index", frame.frame_index},
                        {"joints", std::move(joints)}};
}

KeypointReader::KeypointReader(const fs::path& path) : in_(open_input(path)) {}

std::optional<KeypointFrame> KeypointReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no_);
    }
    KeypointFrame frame;
    try {
      frame = keypoint_frame_from_json(j);
    } catch (const SchemaError& e) {
      throw SchemaError("line " + std::to_string(line_no_) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad frame record: ") + e.what(), line_no_);
    }
    auto key = std::make_pair(frame.video_id, frame.camera);
    auto it = last_index_.find(key);
    if (it != last_index_.end() && frame.frame_index <= it->second) {
      throw SchemaError("line " + std::to_string(line_no_) + ": frame_index " +
                        std::to_string(frame.frame_index) + " not ascending for video " +
                        frame.video_id + " camera " + std::to_string(frame.camera));
    }
    last_index_[key] = frame.frame_index;
    return frame;
  }
  return std::nullopt;
}

std::vector<KeypointFrame> read_keypoints(const fs::path& path) {
  KeypointReader reader(path);
  std::vector<KeypointFrame> frames;
  while (auto f = reader.next()) frames.push_back(std::move(*f));
  return frames;
}

void write_keypoints(const fs::path& path, const std::vector<KeypointFrame>& frames) {
  write_file_atomically(path, [&](std::ostream& out) {
    for (const auto& f : frames) out << keypoint_frame_to_json(f).dump() << '\n';
  });
}

// ---------------------------------------------------------------------------
// STEM container

std::int64_t StemHeader::num_frames() const {
  if (num_segments == 0) return 0;
  return static_cast<std::int64_t>(num_segments - 1) * stride + segment_len;
}

EmbeddingFile read_embeddings(const fs::path& path) {
  auto in = open_input(path, std::ios::binary);
  ByteReader r(in, path.string());
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, "STEM", 4) != 0) throw FormatError(path.string() + ": bad magic");
  EmbeddingFile file;
  auto& h = file.header;
  h.version = r.get<std::uint16_t>();
  if (h.version != kStemVersion) {
    throw VersionError(path.string() + ": unsupported version " + std::to_string(h.version));
  }
  h.feat_dim = r.get<std::uint32_t>();
  h.segment_len = r.get<std::uint32_t>();
  h.stride = r.get<std::uint32_t>();
  h.num_segments = r.get<std::uint32_t>();
  if (h.segment_len == 0 || h.stride == 0) {
    throw FormatError(path.string() + ": segment_len and stride must be >= 1");
  }
  file.segments.resize(h.num_segments);
  std::vector<char> row(static_cast<std::size_t>(h.feat_dim) * 4);
  for (std::uint32_t s = 0; s < h.num_segments; ++s) {
    auto& seg = file.segments[s];
    seg.start_frame = static_cast<std::int64_t>(s) * h.stride;
    seg.values.resize(h.feat_dim);
    r.read(row.data(), row.size());
    for (std::uint32_t k = 0; k < h.feat_dim; ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(row[4 * k + b])) << (8 * b);
      }
      seg.values[k] = std::bit_cast<float>(bits);
    }
  }
  if (!r.at_end()) {
    throw FormatError(path.string() + ": trailing bytes after " + std::to_string(h.num_segments) +
                      " segments of dim " + std::to_string(h.feat_dim));
  }
  return file;
}

void write_embeddings(const fs::path& path, StemHeader header,
                      const std::vector<EmbeddingSegment>& segments) {
  if (header.segment_len == 0 || header.stride == 0) {
    throw ConfigError("segment_len and stride must be >= 1");
  }
  header.num_segments = static_cast<std::uint32_t>(segments.size());
  for (std::size_t s = 0; s < segments.size(); ++s) {
    if (segments[s].values.size() != header.feat_dim) {
      throw ShapeError("segment " + std::to_string(s) + " has " +
                       std::to_string(segments[s].values.size()) + " values, header says " +
                       std::to_string(header.feat_dim));
    }
    if (segments[s].start_frame != static_cast<std::int64_t>(s) * header.stride) {
      throw SchemaError("segment " + std::to_string(s) + " starts at frame " +
                        std::to_string(segments[s].start_frame) + ", expected " +
                        std::to_string(static_cast<std::int64_t>(s) * header.stride));
    }
  }
  write_file_atomically(path, [&](std::ostream& out) {
    out.write("STEM", 4);
    put_le<std::uint16_t>(out, header.version);
    put_le<std::uint32_t>(out, header.feat_dim);
    put_le<std::uint32_t>(out, header.segment_len);
    put_le<std::uint32_t>(out, header.stride);
    put_le<std::uint32_t>(out, header.num_segments);
    for (const auto& seg : segments) {
      for (float v : seg.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
  });
}

// ---------------------------------------------------------------------------
// Segmentation

std::vector<std::pair<std::int64_t, std::int64_t>> enumerate_segments(const SegmentIndex& idx) {
  if (idx.segment_len < 1 || idx.stride < 1) {
    throw ConfigError("segment_len and stride must be >= 1");
  }
  if (idx.num_frames < idx.segment_len) {
    throw InsufficientDataError("need at least " + std::to_string(idx.segment_len) +
                                " frames, got " + std::to_string(idx.num_frames));
  }
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  out.reserve(static_cast<std::size_t>((idx.num_frames - idx.segment_len) / idx.stride + 1));
  for (std::int64_t s = 0; s + idx.segment_len <= idx.num_frames; s += idx.stride) {
    out.emplace_back(s, s + idx.segment_len);
  }
  return out;
}

int segment_majority_label(std::span<const int> frame_labels) {
  std::map<int, std::size_t> counts;
  for (int l : frame_labels) ++counts[l];
  int best = 0;
  std::size_t best_count = 0;
  for (auto [label, count] : counts) {  // ascending label order: first max wins ties
    if (count > best_count) {
      best = label;
      best_count = count;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Annotations

void AnnotationRecord::validate() const {
  if (class_id < 0 || class_id >= kNumClasses) {
    throw SchemaError("class_id " + std::to_string(class_id) + " outside [0, " +
                      std::to_string(kNumClasses) + ")");
  }
  if (start_frame < 0 || !(start_frame < end_frame)) {
    throw SchemaError("interval [" + std::to_string(start_frame) + ", " +
                      std::to_string(end_frame) + ") is empty or negative");
  }
}

std::vector<AnnotationRecord> read_annotations(const fs::path& path) {
  std::vector<AnnotationRecord> out;
  for_each_csv_row(path, 4, "class_id", [&](const std::vector<std::string>& f, std::size_t line) {
    AnnotationRecord rec{f[0], parse_number<int>(f[1], line, "class_id"),
                         parse_number<std::int64_t>(f[2], line, "start_frame"),
                         parse_number<std::int64_t>(f[3], line, "end_frame")};
    try {
      rec.validate();
    } catch (const SchemaError& e) {
      throw ParseError(e.what(), line);
    }
    out.push_back(std::move(rec));
  });
  return out;
}

void write_annotations(const fs::path& path, const std::vector<AnnotationRecord>& records) {
  write_file_atomically(path, [&](std::ostream& out) {
    out << "video_id,class_id,start_frame,end_frame\n";
    for (const auto& r : records) {
      out << r.video_id << ',' << r.class_id << ',' << r.start_frame << ',' << r.end_frame << '\n';
    }
  });
}

AnnotationRecord annotation_from_seconds(std::string video_id, int class_id, double start_s,
                                         double end_s, double fps) {
  if (!(fps > 0.0)) throw ConfigError("fps must be positive");
  AnnotationRecord rec{std::move(video_id), class_id,
                       static_cast<std::int64_t>(std::llround(start_s * fps)),
                       static_cast<std::int64_t>(std::llround(end_s * fps))};
  rec.validate();
  return rec;
}

std::vector<int> frame_labels(std::int64_t num_frames, const std::vector<AnnotationRecord>& records) {
  std::vector<int> labels(static_cast<std::size_t>(std::max<std::int64_t>(num_frames, 0)), 0);
  for (const auto& r : records) {
    const auto lo = std::clamp<std::int64_t>(r.start_frame, 0, num_frames);
    const auto hi = std::clamp<std::int64_t>(r.end_frame, 0, num_frames);
    for (auto f = lo; f < hi; ++f) labels[static_cast<std::size_t>(f)] = r.class_id;
  }
  return labels;
}

std::vector<PredictionRecord> read_predictions(const fs::path& path) {
  std::vector<PredictionRecord> out;
  for_each_csv_row(path, 5, "class_id", [&](const std::vector<std::string>& f, std::size_t line) {
    PredictionRecord rec{f[0], parse_number<int>(f[1], line, "class_id"),
                         parse_number<std::int64_t>(f[2], line, "start_frame"),
                         parse_number<std::int64_t>(f[3], line, "end_frame"),
                         parse_number<double>(f[4], line, "peak_height")};
    if (rec.class_id < 0 || rec.class_id >= kNumClasses || !(rec.start_frame < rec.end_frame)) {
      throw ParseError("invalid prediction record", line);
    }
    out.push_back(std::move(rec));
  });
  return out;
}

void write_predictions(const fs::path& path, const std::vector<PredictionRecord>& records) {
  write_file_atomically(path, [&](std::ostream& out) {
    out << "video_id,class_id,start_frame,end_frame,peak_height\n";
    for (const auto& r : records) {
      out << r.video_id << ',' << r.class_id << ',' << r.start_frame << ',' << r.end_frame << ','
          << format_double(r.peak_height) << '\n';
    }
  });
}

// ---------------------------------------------------------------------------
// Checkpoints

void write_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  const std::string config = ckpt.config.dump();
  write_file_atomically(path, [&](std::ostream& out) {
    out.write("DCKP", 4);
    put_le<std::uint16_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(config.size()));
    out.write(config.data(), static_cast<std::streamsize>(config.size()));
    put_le<std::uint64_t>(out, ckpt.step);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
      std::size_t count = 1;
      for (auto d : t.shape) count *= d;
      if (count != t.values.size()) {
        throw ShapeError("tensor " + t.name + " has " + std::to_string(t.values.size()) +
                         " values for shape of " + std::to_string(count));
      }
      put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
      out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
      for (auto d : t.shape) put_le<std::uint32_t>(out, d);
      for (double v : t.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  });
}

Checkpoint read_checkpoint(const fs::path& path, const ShapeSchema& schema) {
  auto in = open_input(path, std::ios::binary);
  ByteReader r(in, path.string());
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, "DCKP", 4) != 0) throw FormatError(path.string() + ": bad magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw VersionError(path.string() + ": checkpoint version " + std::to_string(version) +
                       ", expected " + std::to_string(kCheckpointVersion));
  }
  Checkpoint ckpt;
  std::string config(r.get<std::uint32_t>(), '\0');
  r.read(config.data(), config.size());
  try {
    ckpt.config = nlohmann::json::parse(config);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": corrupt config snapshot: " + e.what());
  }
  ckpt.step = r.get<std::uint64_t>();
  const auto n = r.get<std::uint32_t>();
  ckpt.tensors.resize(n);
  for (auto& t : ckpt.tensors) {
    t.name.resize(r.get<std::uint16_t>());
    r.read(t.name.data(), t.name.size());
    t.shape.resize(r.get<std::uint32_t>());
    std::size_t count = 1;
    for (auto& d : t.shape) {
      d = r.get<std::uint32_t>();
      count *= d;
    }
    t.values.resize(count);
    for (auto& v : t.values) v = std::bit_cast<double>(r.get<std::uint64_t>());
  }

  if (schema) {
    const auto expected = schema(ckpt.config);
    std::map<std::string, const NamedTensor*> seen;
    for (const auto& t : ckpt.tensors) {
      if (!seen.emplace(t.name, &t).second) throw SchemaError("tensor " + t.name + " repeated");
      if (!expected.contains(t.name)) throw SchemaError("unexpected tensor " + t.name);
    }
    for (const auto& [name, shape] : expected) {
      auto it = seen.find(name);
      if (it == seen.end()) throw SchemaError("checkpoint is missing tensor " + name);
      if (it->second->shape != shape) {
        auto fmt = [](const std::vector<std::uint32_t>& s) {
          std::string out = "[";
          for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
          return out + "]";
        };
        throw ShapeError("tensor " + name + " has shape " + fmt(it->second->shape) +
                         " but the config implies " + fmt(shape));
      }
    }
  }
  return ckpt;
}

// ---------------------------------------------------------------------------

void write_file_atomically(const fs::path& path, const std::function<void(std::ostream&)>& writer) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    writer(out);
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

}  // namespace dact
