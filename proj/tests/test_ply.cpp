#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "grdo/ply.hpp"
#include "grdo/rng.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("grdo_test_" + name);
}

// Writes a minimal 3DGS PLY without normals (59 float properties).
void write_min_ply(const fs::path& path, const std::vector<float>& vertex) {
  std::ofstream out(path, std::ios::binary);
  out << "ply\nformat binary_little_endian 1.0\nelement vertex 1\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  for (int c = 0; c < 3; ++c) out << "property float f_dc_" << c << "\n";
  for (int k = 0; k < 45; ++k) out << "property float f_rest_" << k << "\n";
  out << "property float opacity\n";
  for (int a = 0; a < 3; ++a) out << "property float scale_" << a << "\n";
  for (int a = 0; a < 4; ++a) out << "property float rot_" << a << "\n";
  out << "end_header\n";
  out.write(reinterpret_cast<const char*>(vertex.data()),
            static_cast<std::streamsize>(vertex.size() * sizeof(float)));
}

}  // namespace

TEST_CASE("a 59-property vertex loads with all scalars recovered") {
  std::vector<float> v(59, 0.0f);
  v[55] = 1.0f;  // rot_0
  const auto path = temp_file("min.ply");
  write_min_ply(path, v);
  const grdo::GaussianCloud cloud = grdo::load_ply(path.string());
  REQUIRE(cloud.size() == 1);
  REQUIRE(cloud.rotations[0] == Eigen::Vector4d(1, 0, 0, 0));
  REQUIRE(cloud.positions[0] == Eigen::Vector3d::Zero());
  REQUIRE(cloud.sh_coeffs[0].isZero());
  fs::remove(path);
}

TEST_CASE("all 59 scalars survive a load") {
  std::vector<float> v(59);
  for (int i = 0; i < 59; ++i) v[i] = 0.25f * (i + 1);
  const auto path = temp_file("full59.ply");
  write_min_ply(path, v);
  const grdo::GaussianCloud c = grdo::load_ply(path.string());
  REQUIRE(c.size() == 1);
  // x y z
  REQUIRE(c.positions[0] == Eigen::Vector3d(v[0], v[1], v[2]));
  // f_dc
  for (int ch = 0; ch < 3; ++ch) REQUIRE(c.sh_coeffs[0](0, ch) == v[3 + ch]);
  // f_rest in channel-major order
  for (int k = 0; k < 45; ++k) {
    REQUIRE(c.sh_coeffs[0](1 + k % 15, k / 15) == v[6 + k]);
  }
  REQUIRE(c.opacity_logits[0] == v[51]);
  REQUIRE(c.log_scales[0] == Eigen::Vector3d(v[52], v[53], v[54]));
  REQUIRE(c.rotations[0] == Eigen::Vector4d(v[55], v[56], v[57], v[58]));
  fs::remove(path);
}

TEST_CASE("save/load round trip is exact for random clouds") {
  grdo::Rng rng(5);
  const grdo::GaussianCloud cloud = testutil::random_cloud(rng, 37);
  const auto path = temp_file("roundtrip.ply");
  grdo::save_ply(cloud, path.string());
  const grdo::GaussianCloud back = grdo::load_ply(path.string());
  REQUIRE(back.size() == cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    REQUIRE(back.positions[i] == cloud.positions[i]);
    REQUIRE(back.log_scales[i] == cloud.log_scales[i]);
    REQUIRE(back.rotations[i] == cloud.rotations[i]);
    REQUIRE(back.opacity_logits[i] == cloud.opacity_logits[i]);
    REQUIRE(back.sh_coeffs[i] == cloud.sh_coeffs[i]);
  }
  fs::remove(path);
}

TEST_CASE("empty cloud writes a valid zero-vertex PLY") {
  grdo::GaussianCloud cloud;
  const auto path = temp_file("empty.ply");
  grdo::save_ply(cloud, path.string());
  const grdo::GaussianCloud back = grdo::load_ply(path.string());
  REQUIRE(back.size() == 0);
  fs::remove(path);
}

TEST_CASE("file size is header plus 62 floats per vertex") {
  // 59 scalars per Gaussian plus the three zero normals of the reference
  // layout.
  grdo::Rng rng(6);
  const grdo::GaussianCloud cloud = testutil::random_cloud(rng, 1000);
  const auto path = temp_file("size.ply");
  grdo::save_ply(cloud, path.string());

  std::ifstream in(path, std::ios::binary);
  std::string line;
  size_t header_bytes = 0;
  while (std::getline(in, line)) {
    header_bytes += line.size() + 1;
    if (line == "end_header") break;
  }
  REQUIRE(fs::file_size(path) == header_bytes + 1000 * 62 * 4);
  fs::remove(path);
}

TEST_CASE("missing property is named in the error") {
  const auto path = temp_file("missing.ply");
  std::ofstream out(path, std::ios::binary);
  out << "ply\nformat binary_little_endian 1.0\nelement vertex 0\n"
         "property float x\nproperty float y\nproperty float z\nend_header\n";
  out.close();
  REQUIRE_THROWS_WITH(grdo::load_ply(path.string()),
                      Catch::Matchers::ContainsSubstring("scale_0"));
  fs::remove(path);
}

TEST_CASE("truncated payload is reported") {
  std::vector<float> v(59, 0.0f);
  const auto path = temp_file("trunc.ply");
  write_min_ply(path, v);
  fs::resize_file(path, fs::file_size(path) - 8);
  REQUIRE_THROWS_WITH(grdo::load_ply(path.string()),
                      Catch::Matchers::ContainsSubstring("truncated"));
  fs::remove(path);
}

TEST_CASE("non-float properties and bad headers are rejected") {
  const auto path = temp_file("bad.ply");
  {
    std::ofstream out(path, std::ios::binary);
    out << "ply\nformat binary_little_endian 1.0\nelement vertex 0\n"
           "property uchar red\nend_header\n";
  }
  REQUIRE_THROWS_WITH(grdo::load_ply(path.string()),
                      Catch::Matchers::ContainsSubstring("red"));
  {
    std::ofstream out(path, std::ios::binary);
    out << "not_a_ply\n";
  }
  REQUIRE_THROWS_AS(grdo::load_ply(path.string()), grdo::ParseError);
  {
    std::ofstream out(path, std::ios::binary);
    out << "ply\nformat ascii 1.0\nelement vertex 0\nend_header\n";
  }
  REQUIRE_THROWS_AS(grdo::load_ply(path.string()), grdo::ParseError);
  fs::remove(path);
}
