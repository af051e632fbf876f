#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "ddhom/fields.hpp"
#include "ddhom/material.hpp"
#include "ddhom/rng.hpp"

namespace ddhom {

static_assert(std::endian::native == std::endian::little,
              "frame files are little-endian; big-endian hosts are not supported");

// One file per frame: a JSON header padded to a fixed 4 KiB block, followed
// by raw float64 arrays (c, mu, u1, u2) in row-major node order. The header
// declares each array's byte offset and length.
inline constexpr std::size_t kFrameHeaderBytes = 4096;

struct FrameMeta {
  GridSpec grid;
  MaterialParams params;
  BoundaryConditions bc;
  std::uint64_t seed = 0;
  int step = 0;
  double time = 0.0;
  std::string run_id;
};

namespace detail {

inline void write_doubles(std::ofstream& out, const Vec& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(sizeof(double) * v.size()));
}

inline Vec read_doubles(std::ifstream& in, std::size_t offset, std::size_t count) {
  Vec v(static_cast<Eigen::Index>(count));
  in.seekg(static_cast<std::streamoff>(offset));
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(sizeof(double) * count));
  if (!in) throw SchemaError("frame file: truncated array");
  return v;
}

}  // namespace detail

inline void save_frame(const std::string& path, const FieldState& s, const FrameMeta& meta) {
  const int n = s.grid.n();
  nlohmann::json h;
  h["format"] = "ddhom-frame-v1";
  h["header_bytes"] = kFrameHeaderBytes;
  h["byte_order"] = "little";
  h["dtype"] = "float64";
  h["rng"] = Philox::kName;
  h["run_id"] = meta.run_id;
  h["seed"] = meta.seed;
  h["step"] = s.step;
  h["time"] = s.time;
  h["grid"] = {{"nx", s.grid.nx}, {"ny", s.grid.ny}, {"Lx", s.grid.Lx}, {"Ly", s.grid.Ly}};
  h["params"] = {{"d_c", meta.params.d_c},     {"d_e", meta.params.d_e},
                 {"s_e", meta.params.s_e},     {"kappa", meta.params.kappa},
                 {"lambda_e", meta.params.lambda_e}, {"mobility", meta.params.mobility},
                 {"l_e", meta.params.l_e}};
  h["bc"] = {{"u1", meta.bc.u1}, {"u2", meta.bc.u2}, {"shear", meta.bc.shear}};
  const char* names[4] = {"c", "mu", "u1", "u2"};
  for (int a = 0; a < 4; ++a) {
    h["arrays"][names[a]] = {{"offset", kFrameHeaderBytes + static_cast<std::size_t>(a) * n * sizeof(double)},
                             {"count", n}};
  }
  std::string hs = h.dump();
  if (hs.size() + 1 > kFrameHeaderBytes) throw Error("frame header exceeds fixed block");
  hs.resize(kFrameHeaderBytes, ' ');
  hs[kFrameHeaderBytes - 1] = '\n';

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  detail::write_doubles(out, s.c);
  detail::write_doubles(out, s.mu);
  detail::write_doubles(out, s.u1);
  detail::write_doubles(out, s.u2);
  if (!out) throw Error("frame write failed: " + path);
}

inline FieldState load_frame(const std::string& path, FrameMeta* meta_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for reading: " + path);
  std::string hs(kFrameHeaderBytes, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(kFrameHeaderBytes));
  if (!in) throw SchemaError("frame file: truncated header");
  nlohmann::json h = nlohmann::json::parse(hs, nullptr, /*throw=*/false);
  if (h.is_discarded() || h.value("format", "") != std::string("ddhom-frame-v1"))
    throw SchemaError("frame file: bad header in " + path);

  FieldState s;
  s.grid.nx = h["grid"]["nx"];
  s.grid.ny = h["grid"]["ny"];
  s.grid.Lx = h["grid"]["Lx"];
  s.grid.Ly = h["grid"]["Ly"];
  s.grid.validate();
  s.step = h["step"];
  s.time = h["time"];
  const std::size_t n = static_cast<std::size_t>(s.grid.n());
  auto arr = [&](const char* name) {
    const auto& a = h["arrays"][name];
    if (static_cast<std::size_t>(a["count"]) != n) throw SchemaError("frame file: array count mismatch");
    return detail::read_doubles(in, a["offset"], n);
  };
  s.c = arr("c");
  s.mu = arr("mu");
  s.u1 = arr("u1");
  s.u2 = arr("u2");
  if (meta_out) {
    meta_out->grid = s.grid;
    meta_out->seed = h["seed"];
    meta_out->step = s.step;
    meta_out->time = s.time;
    meta_out->run_id = h.value("run_id", "");
    meta_out->params.d_c = h["params"]["d_c"];
    meta_out->params.d_e = h["params"]["d_e"];
    meta_out->params.s_e = h["params"]["s_e"];
    meta_out->params.kappa = h["params"]["kappa"];
    meta_out->params.lambda_e = h["params"]["lambda_e"];
    meta_out->params.mobility = h["params"]["mobility"];
    meta_out->params.l_e = h["params"]["l_e"];
    meta_out->bc.u1 = h["bc"]["u1"];
    meta_out->bc.u2 = h["bc"]["u2"];
    meta_out->bc.shear = h["bc"]["shear"];
  }
  return s;
}

// Raw float64 image files used for e2 field references in datasets.
inline void save_image(const std::string& path, const Vec& field) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  detail::write_doubles(out, field);
}

inline Vec load_image(const std::string& path, int expected_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for reading: " + path);
  return detail::read_doubles(in, 0, static_cast<std::size_t>(expected_count));
}

}  // namespace ddhom
