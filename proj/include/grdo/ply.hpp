#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "grdo/common.hpp"
#include "grdo/gaussian.hpp"

namespace grdo {

// Binary little-endian PLY in the reference 3DGS export layout:
//   x y z, nx ny nz, f_dc_0..2, f_rest_0..44, opacity, scale_0..2, rot_0..3
// all float32. Normals are unused; the loader tolerates files without them
// and the writer emits them as zeros for compatibility with reference files.

namespace detail {

inline int sh_rest_row(int k) { return 1 + (k % 15); }   // f_rest is channel-major
inline int sh_rest_col(int k) { return k / 15; }

}  // namespace detail

inline GaussianCloud load_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("load_ply: cannot open " + path);

  std::string line;
  if (!std::getline(in, line) || line != "ply") {
    throw ParseError("load_ply: missing 'ply' magic in " + path);
  }

  size_t vertex_count = 0;
  bool in_vertex_element = false;
  bool saw_format = false;
  std::vector<std::string> props;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment") continue;
    if (tok == "format") {
      std::string fmt, ver;
      ls >> fmt >> ver;
      if (fmt != "binary_little_endian") {
        throw ParseError("load_ply: unsupported format '" + fmt + "'");
      }
      saw_format = true;
    } else if (tok == "element") {
      std::string name;
      size_t count = 0;
      ls >> name >> count;
      if (name != "vertex") throw ParseError("load_ply: unsupported element '" + name + "'");
      vertex_count = count;
      in_vertex_element = true;
    } else if (tok == "property") {
      if (!in_vertex_element) throw ParseError("load_ply: property before element");
      std::string type, name;
      ls >> type >> name;
      if (type != "float") {
        throw ParseError("load_ply: property '" + name + "' has unsupported type '" + type + "'");
      }
      props.push_back(name);
    } else if (tok == "end_header") {
      break;
    } else {
      throw ParseError("load_ply: malformed header line '" + line + "'");
    }
  }
  if (!saw_format) throw ParseError("load_ply: missing format line");

  // Map property names to their column index.
  auto find_prop = [&](const std::string& name, bool required) -> int {
    for (size_t i = 0; i < props.size(); ++i) {
      if (props[i] == name) return static_cast<int>(i);
    }
    if (required) throw ParseError("load_ply: missing property '" + name + "'");
    return -1;
  };

  int pos_idx[3], scale_idx[3], rot_idx[4], dc_idx[3], rest_idx[45];
  const char* axes = "xyz";
  for (int a = 0; a < 3; ++a) pos_idx[a] = find_prop(std::string(1, axes[a]), true);
  for (int a = 0; a < 3; ++a) scale_idx[a] = find_prop("scale_" + std::to_string(a), true);
  for (int a = 0; a < 4; ++a) rot_idx[a] = find_prop("rot_" + std::to_string(a), true);
  for (int a = 0; a < 3; ++a) dc_idx[a] = find_prop("f_dc_" + std::to_string(a), true);
  for (int k = 0; k < 45; ++k) rest_idx[k] = find_prop("f_rest_" + std::to_string(k), true);
  const int opacity_idx = find_prop("opacity", true);

  const size_t stride = props.size();
  std::vector<float> row(stride);
  GaussianCloud cloud;
  cloud.resize(vertex_count);
  for (size_t i = 0; i < vertex_count; ++i) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(stride * sizeof(float)));
    if (!in) {
      throw ParseError("load_ply: truncated payload at vertex " + std::to_string(i) +
                       " of " + std::to_string(vertex_count));
    }
    for (int a = 0; a < 3; ++a) cloud.positions[i][a] = row[pos_idx[a]];
    for (int a = 0; a < 3; ++a) cloud.log_scales[i][a] = row[scale_idx[a]];
    for (int a = 0; a < 4; ++a) cloud.rotations[i][a] = row[rot_idx[a]];
    cloud.opacity_logits[i] = row[opacity_idx];
    for (int c = 0; c < 3; ++c) cloud.sh_coeffs[i](0, c) = row[dc_idx[c]];
    for (int k = 0; k < 45; ++k) {
      cloud.sh_coeffs[i](detail::sh_rest_row(k), detail::sh_rest_col(k)) = row[rest_idx[k]];
    }
  }
  return cloud;
}

inline void save_ply(const GaussianCloud& cloud, const std::string& path) {
  cloud.check_consistent();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_ply: cannot open " + path + " for writing");

  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\n";
  header << "element vertex " << cloud.size() << "\n";
  for (const char* n : {"x", "y", "z", "nx", "ny", "nz"}) {
    header << "property float " << n << "\n";
  }
  for (int c = 0; c < 3; ++c) header << "property float f_dc_" << c << "\n";
  for (int k = 0; k < 45; ++k) header << "property float f_rest_" << k << "\n";
  header << "property float opacity\n";
  for (int a = 0; a < 3; ++a) header << "property float scale_" << a << "\n";
  for (int a = 0; a < 4; ++a) header << "property float rot_" << a << "\n";
  header << "end_header\n";
  out << header.str();

  std::vector<float> row(62);
  for (size_t i = 0; i < cloud.size(); ++i) {
    int c = 0;
    for (int a = 0; a < 3; ++a) row[c++] = static_cast<float>(cloud.positions[i][a]);
    for (int a = 0; a < 3; ++a) row[c++] = 0.0f;  // normals
    for (int ch = 0; ch < 3; ++ch) row[c++] = static_cast<float>(cloud.sh_coeffs[i](0, ch));
    for (int k = 0; k < 45; ++k) {
      row[c++] = static_cast<float>(
          cloud.sh_coeffs[i](detail::sh_rest_row(k), detail::sh_rest_col(k)));
    }
    row[c++] = static_cast<float>(cloud.opacity_logits[i]);
    for (int a = 0; a < 3; ++a) row[c++] = static_cast<float>(cloud.log_scales[i][a]);
    for (int a = 0; a < 4; ++a) row[c++] = static_cast<float>(cloud.rotations[i][a]);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("save_ply: write failure on " + path);
}

}  // namespace grdo
