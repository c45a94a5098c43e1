#include "edgecl/byte_io.hpp"
#include "edgecl/head_model.hpp"

namespace edgecl {

std::vector<std::uint8_t> encode_head(const Head& params) {
  io::ByteWriter w;
  w.magic("HDP1");
  w.u32(static_cast<std::uint32_t>(params.dim()));
  w.u32(static_cast<std::uint32_t>(params.hidden()));
  w.u32(static_cast<std::uint32_t>(params.classes()));
  w.f32s(params.w1.data(), static_cast<std::size_t>(params.w1.size()));
  w.f32s(params.b1.data(), static_cast<std::size_t>(params.b1.size()));
  w.f32s(params.w2.data(), static_cast<std::size_t>(params.w2.size()));
  w.f32s(params.b2.data(), static_cast<std::size_t>(params.b2.size()));
  return w.take();
}

Head decode_head(const std::vector<std::uint8_t>& bytes, std::size_t& offset) {
  io::ByteReader r(bytes, offset);
  r.expect_magic("HDP1");
  const std::size_t header_at = r.offset();
  const std::uint32_t dim = r.u32();
  const std::uint32_t hidden = r.u32();
  const std::uint32_t classes = r.u32();
  if (dim == 0 || hidden == 0 || classes == 0) throw FormatError("head header has a zero dimension", header_at);
  const std::uint64_t floats = std::uint64_t{hidden} * dim + hidden + std::uint64_t{classes} * hidden + classes;
  if (floats * sizeof(float) > r.remaining())
    throw FormatError("head header declares " + std::to_string(floats) + " floats but only " +
                          std::to_string(r.remaining()) + " payload bytes follow",
                      r.offset());
  Head p = Head::zeros(dim, hidden, classes);
  r.f32s(p.w1.data(), static_cast<std::size_t>(p.w1.size()));
  r.f32s(p.b1.data(), static_cast<std::size_t>(p.b1.size()));
  r.f32s(p.w2.data(), static_cast<std::size_t>(p.w2.size()));
  r.f32s(p.b2.data(), static_cast<std::size_t>(p.b2.size()));
  if (!p.all_finite()) throw FormatError("head payload contains non-finite values", header_at);
  offset = r.offset();
  return p;
}

void save_head(const Head& params, const std::filesystem::path& path) { io::write_file(path, encode_head(params)); }

Head load_head(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  std::size_t offset = 0;
  Head p = decode_head(bytes, offset);
  if (offset != bytes.size()) throw FormatError("trailing bytes after head payload", offset);
  return p;
}

}  // namespace edgecl
