#pragma once

// Dataset persistence (one .dimg file per sample), in-memory splits, and the
// epoch-shuffled streams the trainer draws from.
//
// .dimg layout, all little-endian:
//   "DTSIMG1" (7 bytes) | u32 H | u32 W | u32 C | f32 image[3*H*W] | u8 labels[H*W]

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "dts/error.hpp"
#include "dts/label_map.hpp"
#include "dts/synth.hpp"
#include "dts/tensor.hpp"

namespace dts {

namespace fs = std::filesystem;

inline constexpr std::string_view kImageMagic = "DTSIMG1";
inline constexpr const char* kImageExt = ".dimg";

namespace io {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline void put_f32(std::string& buf, float f) { put_u32(buf, std::bit_cast<std::uint32_t>(f)); }

/// Bounds-checked little-endian reader that reports byte offsets on failure.
class Reader {
 public:
  Reader(std::string bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

  std::size_t offset() const noexcept { return pos_; }
  bool done() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(source_ + ": " + what + " at byte offset " + std::to_string(pos_));
  }
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) fail(std::string("truncated ") + what);
  }
  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string_view v(bytes_.data() + pos_, n);
    pos_ += n;
    return v;
  }
  std::uint32_t u32(const char* what) {
    std::string_view b = bytes(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[static_cast<std::size_t>(i)])) << (8 * i);
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

 private:
  std::string bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void dump(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

}  // namespace io

inline std::string encode_sample(const Tensor& image, const LabelMap& label, int num_classes) {
  kernels::require_rank(image, 3, "encode_sample");
  if (image.dim(0) != 3 || image.dim(1) != label.height || image.dim(2) != label.width) {
    throw DimensionError("encode_sample: image " + shape_str(image.shape()) + " does not match label map");
  }
  std::string buf(kImageMagic);
  io::put_u32(buf, static_cast<std::uint32_t>(label.height));
  io::put_u32(buf, static_cast<std::uint32_t>(label.width));
  io::put_u32(buf, static_cast<std::uint32_t>(num_classes));
  buf.reserve(buf.size() + image.numel() * 4 + label.size());
  for (float v : image.data()) io::put_f32(buf, v);
  buf.append(reinterpret_cast<const char*>(label.ids.data()), label.ids.size());
  return buf;
}

struct DecodedSample {
  Tensor image;
  LabelMap label;
  int num_classes = 0;
};

inline DecodedSample decode_sample(std::string bytes, const std::string& source) {
  io::Reader r(std::move(bytes), source);
  if (r.remaining() < kImageMagic.size() || r.bytes(kImageMagic.size(), "magic") != kImageMagic) {
    throw FormatError(source + ": bad magic, expected \"DTSIMG1\" at byte offset 0");
  }
  const std::uint32_t h = r.u32("height"), w = r.u32("width"), c = r.u32("class count");
  if (h == 0 || w == 0 || h > 1u << 14 || w > 1u << 14) r.fail("implausible image size");
  if (c == 0 || c > 254) r.fail("implausible class count");
  DecodedSample s;
  s.num_classes = static_cast<int>(c);
  s.image = Tensor({3, static_cast<int>(h), static_cast<int>(w)});
  r.need(s.image.numel() * 4, "image payload");
  for (float& v : s.image.data()) v = r.f32("image payload");
  std::string_view ids = r.bytes(static_cast<std::size_t>(h) * w, "label payload");
  s.label = LabelMap(static_cast<int>(h), static_cast<int>(w));
  std::memcpy(s.label.ids.data(), ids.data(), ids.size());
  if (!r.done()) r.fail("trailing bytes after label payload");
  return s;
}

inline std::string sample_filename(std::uint64_t seed) {
  std::ostringstream os;
  os << std::setw(12) << std::setfill('0') << seed << kImageExt;
  return os.str();
}

/// Writes one file per sample, named by seed. Creates `dir` if needed.
inline void write_dataset(const std::vector<SceneSample>& samples, const fs::path& dir, int num_classes,
                          bool strip_labels = false) {
  fs::create_directories(dir);
  for (const SceneSample& s : samples) {
    LabelMap label = strip_labels ? LabelMap(s.label.height, s.label.width, 0) : s.label;
    io::dump(dir / sample_filename(s.seed), encode_sample(s.image, label, num_classes));
  }
}

/// Reads every .dimg in `dir` (sorted by name). Missing or empty directory -> empty list.
inline std::vector<SceneSample> read_dataset(const fs::path& dir, DomainKind domain = DomainKind::kSource) {
  std::vector<SceneSample> out;
  if (!fs::exists(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == kImageExt) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const fs::path& f : files) {
    DecodedSample d = decode_sample(io::slurp(f), f.string());
    SceneSample s;
    s.image = std::move(d.image);
    s.label = std::move(d.label);
    s.domain = domain;
    const std::string stem = f.stem().string();
    if (!stem.empty() && std::all_of(stem.begin(), stem.end(), [](char ch) { return ch >= '0' && ch <= '9'; }))
      s.seed = std::stoull(stem);
    out.push_back(std::move(s));
  }
  return out;
}

/// Fraction of images containing at least one pixel of each class.
inline std::vector<double> class_frequency(const std::vector<LabelMap>& labels, int num_classes) {
  if (labels.empty()) throw ConfigError("class_frequency: empty dataset");
  std::vector<double> freq(static_cast<std::size_t>(num_classes), 0.0);
  for (const LabelMap& l : labels) {
    std::vector<bool> seen(static_cast<std::size_t>(num_classes), false);
    for (std::uint8_t v : l.ids)
      if (v != kIgnoreLabel && v < num_classes) seen[v] = true;
    for (int c = 0; c < num_classes; ++c)
      if (seen[static_cast<std::size_t>(c)]) freq[static_cast<std::size_t>(c)] += 1.0;
  }
  for (double& f : freq) f /= static_cast<double>(labels.size());
  return freq;
}

inline std::vector<double> class_frequency(const std::vector<SceneSample>& samples, int num_classes) {
  std::vector<LabelMap> labels;
  labels.reserve(samples.size());
  for (const SceneSample& s : samples) labels.push_back(s.label);
  return class_frequency(labels, num_classes);
}

// ---------------------------------------------------------------------------
// In-memory splits

struct LabeledSet {
  std::vector<Tensor> images;
  std::vector<LabelMap> labels;
  std::size_t size() const noexcept { return images.size(); }
};

/// Target training images. Holds no labels by construction.
struct UnlabeledSet {
  std::vector<Tensor> images;
  std::size_t size() const noexcept { return images.size(); }
};

inline LabeledSet to_labeled(std::vector<SceneSample> samples) {
  LabeledSet s;
  for (SceneSample& x : samples) {
    s.images.push_back(std::move(x.image));
    s.labels.push_back(std::move(x.label));
  }
  return s;
}

inline UnlabeledSet to_unlabeled(std::vector<SceneSample> samples) {
  UnlabeledSet s;
  for (SceneSample& x : samples) s.images.push_back(std::move(x.image));
  return s;
}

/// Seed ranges and counts for a generated benchmark.
struct BenchmarkSpec {
  int height = 64;
  int width = 64;
  int num_classes = 5;
  int source_train = 800;
  int target_train = 800;
  int target_eval = 200;
  int source_eval = 200;
  std::uint64_t source_seed = 0;          // source train seeds start here
  std::uint64_t target_seed = 1'000'000;  // unpaired by default
  DomainSpec source = DomainSpec::source();
  DomainSpec target = DomainSpec::target();

  std::uint64_t source_eval_seed() const { return source_seed + 500'000; }
  std::uint64_t target_eval_seed() const { return target_seed + 500'000; }
};

struct Benchmark {
  int num_classes = 5;
  LabeledSet source_train;
  UnlabeledSet target_train;
  LabeledSet target_eval;
  LabeledSet source_eval;
};

/// Generates `count` scenes from consecutive seeds, spread over up to `threads` workers.
inline std::vector<SceneSample> generate_range(std::uint64_t first_seed, int count, const DomainSpec& spec, int height,
                                               int width, int num_classes, DomainKind domain, unsigned threads = 1) {
  std::vector<SceneSample> out(static_cast<std::size_t>(std::max(0, count)));
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max(1, count))));
  auto work = [&](unsigned w) {
    for (std::size_t i = w; i < out.size(); i += threads)
      out[i] = generate_scene(first_seed + i, spec, height, width, num_classes, domain);
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(work, w);
  }
  return out;
}

inline Benchmark generate_benchmark(const BenchmarkSpec& b, unsigned threads = 1) {
  Benchmark out;
  out.num_classes = b.num_classes;
  const auto gen = [&](std::uint64_t seed, int n, const DomainSpec& spec, DomainKind kind) {
    return generate_range(seed, n, spec, b.height, b.width, b.num_classes, kind, threads);
  };
  out.source_train = to_labeled(gen(b.source_seed, b.source_train, b.source, DomainKind::kSource));
  out.target_train = to_unlabeled(gen(b.target_seed, b.target_train, b.target, DomainKind::kTarget));
  out.target_eval = to_labeled(gen(b.target_eval_seed(), b.target_eval, b.target, DomainKind::kTarget));
  out.source_eval = to_labeled(gen(b.source_eval_seed(), b.source_eval, b.source, DomainKind::kSource));
  return out;
}

/// Writes the benchmark under `root`; target/train is written without labels.
inline void write_benchmark(const BenchmarkSpec& b, const fs::path& root, unsigned threads = 1) {
  const auto gen = [&](std::uint64_t seed, int n, const DomainSpec& spec, DomainKind kind) {
    return generate_range(seed, n, spec, b.height, b.width, b.num_classes, kind, threads);
  };
  write_dataset(gen(b.source_seed, b.source_train, b.source, DomainKind::kSource), root / "source" / "train",
                b.num_classes);
  write_dataset(gen(b.source_eval_seed(), b.source_eval, b.source, DomainKind::kSource), root / "source" / "eval",
                b.num_classes);
  write_dataset(gen(b.target_seed, b.target_train, b.target, DomainKind::kTarget), root / "target" / "train",
                b.num_classes, true);
  write_dataset(gen(b.target_eval_seed(), b.target_eval, b.target, DomainKind::kTarget), root / "target" / "eval",
                b.num_classes);
}

/// Loads a dataset directory laid out as source/train, target/train, target/eval
/// (and optionally source/eval). Target training labels are never read.
inline Benchmark load_benchmark(const fs::path& root) {
  Benchmark out;
  std::vector<SceneSample> src = read_dataset(root / "source" / "train");
  if (src.empty()) throw FormatError("no samples in " + (root / "source" / "train").string());
  const fs::path first_file = [&] {
    for (const auto& e : fs::directory_iterator(root / "source" / "train"))
      if (e.path().extension() == kImageExt) return e.path();
    return fs::path{};
  }();
  out.num_classes = decode_sample(io::slurp(first_file), first_file.string()).num_classes;
  out.source_train = to_labeled(std::move(src));
  out.target_train = to_unlabeled(read_dataset(root / "target" / "train", DomainKind::kTarget));
  out.target_eval = to_labeled(read_dataset(root / "target" / "eval", DomainKind::kTarget));
  out.source_eval = to_labeled(read_dataset(root / "source" / "eval"));
  if (out.target_train.size() == 0) throw FormatError("no samples in " + (root / "target" / "train").string());
  return out;
}

// ---------------------------------------------------------------------------
// Streams

/// Cycles through [0, n) in a fresh seeded permutation every epoch.
class IndexStream {
 public:
  IndexStream() = default;
  IndexStream(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    if (n == 0) throw ConfigError("cannot stream from an empty dataset");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }
  std::size_t next() {
    if (pos_ == order_.size()) reshuffle();
    return order_[pos_++];
  }
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
    ++epoch_;
  }
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
};

struct LabeledView {
  const Tensor& image;
  const LabelMap& label;
};

class SourceStream {
 public:
  SourceStream(const LabeledSet& set, std::uint64_t seed) : set_(&set), idx_(set.size(), seed) {}
  LabeledView next() {
    const std::size_t i = idx_.next();
    return {set_->images[i], set_->labels[i]};
  }

 private:
  const LabeledSet* set_;
  IndexStream idx_;
};

class TargetStream {
 public:
  TargetStream(const UnlabeledSet& set, std::uint64_t seed) : set_(&set), idx_(set.size(), seed) {}
  const Tensor& next() { return set_->images[idx_.next()]; }

 private:
  const UnlabeledSet* set_;
  IndexStream idx_;
};

}  // namespace dts
