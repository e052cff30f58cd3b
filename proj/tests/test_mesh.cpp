#include <doctest.h>

#include <Eigen/Geometry>

#include <sstream>

#include "support.hpp"
#include "texweave/error.hpp"
#include "texweave/mesh.hpp"

using namespace texweave;
using texweave::testing::cube;
using texweave::testing::data_path;

namespace {

Mesh parse(const std::string& text) {
    std::istringstream in(text);
    return parse_obj(in);
}

} // namespace

TEST_CASE("cube fixture loads with one atlas cell per face") {
    const Mesh& m = cube();
    CHECK(m.num_vertices() == 8);
    CHECK(m.num_faces() == 12);
    CHECK(m.uvs.rows() == 24);
    CHECK(m.normals.rows() == 6);
    CHECK(m.bounding_radius() == doctest::Approx(std::sqrt(3.0) / 2).epsilon(1e-12));
    CHECK(m.centroid().norm() < 1e-12);
    CHECK_NOTHROW(check_mesh(m));
}

TEST_CASE("polygons are fan triangulated and indices may be negative") {
    const Mesh m = parse(
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n"
        "vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\n"
        "f -4/-4 -3/-3 -2/-2 -1/-1 # trailing comment\n");
    REQUIRE(m.num_faces() == 2);
    CHECK(m.position_faces.row(0) == Eigen::RowVector3i(0, 1, 2));
    CHECK(m.position_faces.row(1) == Eigen::RowVector3i(0, 2, 3));
    CHECK(m.uv_faces.row(1) == Eigen::RowVector3i(0, 2, 3));
}

TEST_CASE("parse errors carry the offending line") {
    SUBCASE("face without texture coordinates") {
        try {
            parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
            FAIL("expected MissingUV");
        } catch (const MissingUV& e) {
            CHECK(e.line() == 4);
        }
    }
    SUBCASE("uv outside the unit square") {
        try {
            parse("v 0 0 0\nvt 1.5 0\n");
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 2);
        }
    }
    SUBCASE("index out of range") {
        CHECK_THROWS_AS(parse("v 0 0 0\nvt 0 0\nf 1/1 2/1 3/1\n"), ParseError);
    }
    SUBCASE("missing numbers") {
        CHECK_THROWS_AS(parse("v 0 0\n"), ParseError);
    }
    SUBCASE("no faces") {
        CHECK_THROWS_AS(parse("v 0 0 0\n"), EmptyMesh);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_obj(data_path("does_not_exist.obj")), ParseError);
    }
}

TEST_CASE("absent normals are area-weighted averages of face normals") {
    // Two faces sharing vertex 0: a unit right triangle in z=0 (area 1/2) and a
    // 2x2 right triangle in x=0 (area 2). Expected normal at vertex 0:
    // normalize(1/2 * (0,0,1) + 2 * (1,0,0)).
    const Mesh m = parse(
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 2 0\nv 0 0 -2\n"
        "vt 0 0\n"
        "f 1/1 2/1 3/1\nf 1/1 5/1 4/1\n");
    const Eigen::Vector3d expected = Eigen::Vector3d(2.0, 0.0, 0.5).normalized();
    REQUIRE(m.normals.rows() == 5);
    const Eigen::Vector3d n0 = m.normals.row(m.normal_faces(0, 0));
    CHECK((n0 - expected).norm() < 1e-12);
    CHECK((Eigen::Vector3d(m.normals.row(1)) - Eigen::Vector3d::UnitZ()).norm() < 1e-12);
    CHECK((Eigen::Vector3d(m.normals.row(3)) - Eigen::Vector3d::UnitX()).norm() < 1e-12);
}

TEST_CASE("a vertex touched only by zero-area faces is degenerate") {
    CHECK_THROWS_AS(parse("v 0 0 0\nv 1 0 0\nv 2 0 0\nvt 0 0\nf 1/1 2/1 3/1\n"), DegenerateFace);
}

TEST_CASE("write then parse reproduces the mesh exactly") {
    std::ostringstream out;
    write_obj(cube(), out);
    std::istringstream in(out.str());
    const Mesh back = parse_obj(in);
    CHECK(back.positions == cube().positions);
    CHECK(back.uvs == cube().uvs);
    CHECK(back.normals == cube().normals);
    CHECK(back.position_faces == cube().position_faces);
    CHECK(back.uv_faces == cube().uv_faces);
    CHECK(back.normal_faces == cube().normal_faces);
}

TEST_CASE("uv chart validation") {
    SUBCASE("cube charts are disjoint and cover their inset cells") {
        const auto r = validate_uv_atlas(cube(), 96);
        CHECK(r.overlap_texel_count == 0);
        CHECK(r.coverage_fraction == doctest::Approx(49.0 / 64)); // each chart spans 7/8 of its cell per axis
        CHECK(r.probe_resolution == 96);
    }
    SUBCASE("two faces on one uv triangle overlap") {
        const Mesh m = load_obj(data_path("overlap.obj"));
        const auto r = validate_uv_atlas(m, 64);
        // Pixel centers strictly inside the shared uv triangle, counted independently.
        long long inside = 0;
        for (int row = 0; row < 64; ++row)
            for (int col = 0; col < 64; ++col) {
                const double u = (col + 0.5) / 64, v = 1.0 - (row + 0.5) / 64;
                if (u > 0.1 && v > 0.1 && u + v < 0.95) ++inside;
            }
        CHECK(r.overlap_texel_count == inside);
    }
    SUBCASE("probe too small") {
        CHECK_THROWS_AS(validate_uv_atlas(cube(), 8), Error);
    }
}

TEST_CASE("octahedron vertex normals point along the vertex positions") {
    const Mesh m = parse(
        "v 1 0 0\nv -1 0 0\nv 0 1 0\nv 0 -1 0\nv 0 0 1\nv 0 0 -1\nvt 0 0\n"
        "f 1/1 3/1 5/1\nf 3/1 2/1 5/1\nf 2/1 4/1 5/1\nf 4/1 1/1 5/1\n"
        "f 3/1 1/1 6/1\nf 2/1 3/1 6/1\nf 4/1 2/1 6/1\nf 1/1 4/1 6/1\n");
    for (Eigen::Index f = 0; f < m.num_faces(); ++f)
        for (int k = 0; k < 3; ++k) {
            const Eigen::Vector3d p = m.positions.row(m.position_faces(f, k));
            const Eigen::Vector3d nrm = m.normals.row(m.normal_faces(f, k));
            CHECK((nrm - p).norm() < 1e-12);
        }
}

TEST_CASE("a triangle over half the unit square covers half the atlas") {
    const Mesh m = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n");
    for (int probe : {64, 101, 256}) {
        const auto r = validate_uv_atlas(m, probe);
        CHECK(std::abs(r.coverage_fraction - 0.5) <= 2.0 / probe);
        CHECK(r.overlap_texel_count == 0);
    }
}
