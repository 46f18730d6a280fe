#pragma once

// Flat parameter checkpoints, little-endian:
//   "DTSCKPT1" then, per parameter until EOF:
//   u32 name_len | name (UTF-8) | u32 rank | u32 dims[rank] | f32 data[prod(dims)]

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dts/dataset.hpp"
#include "dts/error.hpp"
#include "dts/segnet.hpp"

namespace dts {

inline constexpr std::string_view kCheckpointMagic = "DTSCKPT1";

struct NamedTensor {
  std::string name;
  Tensor value;
};

inline std::string encode_checkpoint(const SegNet& net) {
  std::string buf(kCheckpointMagic);
  for (const NamedParam& p : net.params()) {
    io::put_u32(buf, static_cast<std::uint32_t>(p.name.size()));
    buf += p.name;
    io::put_u32(buf, static_cast<std::uint32_t>(p.value.rank()));
    for (int d : p.value.shape()) io::put_u32(buf, static_cast<std::uint32_t>(d));
    for (float v : p.value.data()) io::put_f32(buf, v);
  }
  return buf;
}

inline std::vector<NamedTensor> decode_checkpoint(std::string bytes, const std::string& source) {
  io::Reader r(std::move(bytes), source);
  if (r.remaining() < kCheckpointMagic.size() || r.bytes(kCheckpointMagic.size(), "magic") != kCheckpointMagic) {
    throw FormatError(source + ": bad magic, expected \"DTSCKPT1\" at byte offset 0");
  }
  std::vector<NamedTensor> out;
  while (!r.done()) {
    const std::uint32_t len = r.u32("name length");
    if (len == 0 || len > 4096) r.fail("implausible parameter name length");
    std::string name(r.bytes(len, "parameter name"));
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) r.fail("implausible rank for '" + name + "'");
    std::vector<int> shape;
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32("dimension");
      if (d == 0 || d > (1u << 24)) r.fail("implausible dimension for '" + name + "'");
      shape.push_back(static_cast<int>(d));
      count *= d;
    }
    r.need(count * 4, "tensor payload");
    Tensor t(shape);
    for (float& v : t.data()) v = r.f32("tensor payload");
    out.push_back({std::move(name), std::move(t)});
  }
  return out;
}

inline void save_checkpoint(const SegNet& net, const std::filesystem::path& path) {
  io::dump(path, encode_checkpoint(net));
}

inline std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::slurp(path), path.string());
}

/// Recovers the layout from parameter names and shapes.
inline Arch arch_from_checkpoint(const std::vector<NamedTensor>& params) {
  Arch a;
  a.encoder_widths.clear();
  bool have_dec = false, have_head = false;
  for (const NamedTensor& p : params) {
    if (p.value.rank() != 4) continue;
    if (p.name.rfind("enc", 0) == 0) {
      if (a.encoder_widths.empty()) a.in_channels = p.value.dim(1);
      a.encoder_widths.push_back(p.value.dim(0));
    } else if (p.name == "dec.weight") {
      a.decoder_width = p.value.dim(0);
      have_dec = true;
    } else if (p.name == "head.weight") {
      a.num_classes = p.value.dim(0);
      have_head = true;
    }
  }
  if (a.encoder_widths.empty() || !have_dec || !have_head) {
    throw FormatError("checkpoint does not describe a segmentation net (missing enc/dec/head weights)");
  }
  return a;
}

/// Copies checkpoint values into `net`; names and shapes must match exactly.
inline void load_into(SegNet& net, const std::vector<NamedTensor>& params, const std::string& source) {
  if (params.size() != net.params().size()) {
    throw FormatError(source + ": checkpoint has " + std::to_string(params.size()) + " tensors, model expects " +
                      std::to_string(net.params().size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    NamedParam& dst = net.params()[i];
    if (dst.name != params[i].name || dst.value.shape() != params[i].value.shape()) {
      throw FormatError(source + ": tensor '" + params[i].name + "' " + shape_str(params[i].value.shape()) +
                        " does not match model tensor '" + dst.name + "' " + shape_str(dst.value.shape()));
    }
    dst.value = params[i].value;
  }
}

inline SegNet load_segnet(const std::filesystem::path& path) {
  std::vector<NamedTensor> params = read_checkpoint(path);
  SegNet net(arch_from_checkpoint(params));
  load_into(net, params, path.string());
  return net;
}

}  // namespace dts
