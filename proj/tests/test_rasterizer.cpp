#include <doctest.h>

#include <Eigen/Geometry>

#include <cstring>
#include <numbers>
#include <sstream>

#include "support.hpp"
#include "texweave/error.hpp"
#include "texweave/rasterizer.hpp"

using namespace texweave;
using namespace texweave::testing;
using std::numbers::pi;

namespace {

Mesh parse(const std::string& text) {
    std::istringstream in(text);
    return parse_obj(in);
}

// Camera ray through the center of pixel (r, c).
Eigen::Vector3d pixel_ray(const Viewpoint& vp, int r, int c) {
    const int n = vp.image_size;
    const double focal = 1.0 / std::tan(vp.fov_y / 2);
    const double x = (c + 0.5) / n * 2.0 - 1.0, y = 1.0 - (r + 0.5) / n * 2.0;
    return (vp.rotation().transpose() * Eigen::Vector3d(x / focal, y / focal, -1.0)).normalized();
}

bool same_bits(const Fragment& a, const Fragment& b) {
    return a.face == b.face && std::memcmp(a.barycentric.data(), b.barycentric.data(), sizeof(float) * 3) == 0 &&
           std::memcmp(a.uv.data(), b.uv.data(), sizeof(float) * 2) == 0 &&
           std::memcmp(&a.depth, &b.depth, sizeof(float)) == 0;
}

} // namespace

TEST_CASE("face-on cube front covers exactly the pixel centers inside its projection") {
    Viewpoint vp;
    vp.radius = 3.0;
    vp.image_size = 101;
    const GBuffer gb = rasterize(cube(), vp, 2);
    const double h = (1.0 / std::tan(vp.fov_y / 2)) * 0.5 / (3.0 - 0.5);
    long long expected = 0;
    for (int r = 0; r < vp.image_size; ++r)
        for (int c = 0; c < vp.image_size; ++c) {
            const double x = (c + 0.5) / vp.image_size * 2 - 1, y = 1 - (r + 0.5) / vp.image_size * 2;
            const bool inside = std::abs(x) < h && std::abs(y) < h;
            expected += inside;
            if (inside) CHECK(gb.at(r, c).face <= 1); // the +z quad is faces 0 and 1
            CHECK((gb.at(r, c).face >= 0) == inside);
        }
    CHECK(gb.covered_count() == expected);
}

TEST_CASE("interpolation is perspective correct on a slanted face") {
    Viewpoint vp;
    vp.radius = 2.2;
    vp.azimuth = pi / 5;
    vp.elevation = 0.3;
    vp.image_size = 80;
    const GBuffer gb = rasterize(cube(), vp, 1);
    int checked = 0;
    for (int r = 0; r < gb.rows; ++r)
        for (int c = 0; c < gb.cols; ++c) {
            const Fragment& f = gb.at(r, c);
            if (f.face > 1) continue; // only the +z face: its chart is inset by g = 1/16 of the cell
            if (f.face < 0) continue;
            const Eigen::Vector3d d = pixel_ray(vp, r, c);
            const Eigen::Vector3d eye = vp.eye();
            const double t = (0.5 - eye.z()) / d.z();
            const Eigen::Vector3d p = eye + t * d;
            CHECK((f.position.cast<double>() - p).norm() < 1e-5);
            const double g = 1.0 / 16;
            CHECK(std::abs(f.uv.x() - (g + (1 - 2 * g) * (p.x() + 0.5)) / 3.0) < 1e-5);
            CHECK(std::abs(f.uv.y() - (g + (1 - 2 * g) * (p.y() + 0.5)) / 2.0) < 1e-5);
            CHECK(std::abs(f.depth - to_camera(vp, p).z()) < 1e-4);
            CHECK(std::abs(f.barycentric.sum() - 1.0f) < 1e-5f);
            ++checked;
        }
    CHECK(checked > 500);
}

TEST_CASE("a triangle fan leaves no cracks and honours point-in-triangle ownership") {
    // Square of side 1.2 in the z=0 plane split into 8 triangles around an
    // off-center interior vertex.
    std::string obj = "v 0.13 -0.07 0\n";
    const double corners[8][2] = {{-.6, -.6}, {0, -.6}, {.6, -.6}, {.6, 0}, {.6, .6}, {0, .6}, {-.6, .6}, {-.6, 0}};
    for (const auto& p : corners) obj += "v " + std::to_string(p[0]) + " " + std::to_string(p[1]) + " 0\n";
    obj += "vt 0.5 0.5\n";
    for (int k = 0; k < 8; ++k)
        obj += "f 1/1 " + std::to_string(2 + k) + "/1 " + std::to_string(2 + (k + 1) % 8) + "/1\n";
    const Mesh fan = parse(obj);

    Viewpoint vp;
    vp.radius = 2.0;
    vp.image_size = 97;
    const GBuffer gb = rasterize(fan, vp, 3);
    const double focal = 1.0 / std::tan(vp.fov_y / 2);
    long long expected = 0;
    for (int r = 0; r < gb.rows; ++r)
        for (int c = 0; c < gb.cols; ++c) {
            const double x = ((c + 0.5) / gb.cols * 2 - 1) / focal * 2.0;
            const double y = (1 - (r + 0.5) / gb.rows * 2) / focal * 2.0;
            const bool inside = std::abs(x) < 0.6 && std::abs(y) < 0.6;
            expected += inside;
            CHECK((gb.at(r, c).face >= 0) == inside);
            if (!inside) continue;
            // When the center is strictly inside one triangle, that triangle must win.
            const int k = gb.at(r, c).face;
            const Eigen::Vector2d a(0.13, -0.07), b(corners[k][0], corners[k][1]),
                cc(corners[(k + 1) % 8][0], corners[(k + 1) % 8][1]), p(x, y);
            auto cross = [](const Eigen::Vector2d& u, const Eigen::Vector2d& v) { return u.x() * v.y() - u.y() * v.x(); };
            CHECK(cross(b - a, p - a) >= -1e-9);
            CHECK(cross(cc - b, p - b) >= -1e-9);
            CHECK(cross(a - cc, p - cc) >= -1e-9);
        }
    CHECK(gb.covered_count() == expected);
}

TEST_CASE("back faces are culled") {
    const Mesh ccw = parse("v -1 -1 0\nv 1 -1 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1\n");
    const Mesh cw = parse("v -1 -1 0\nv 0 1 0\nv 1 -1 0\nvt 0 0\nf 1/1 2/1 3/1\n");
    Viewpoint vp;
    vp.radius = 3.0;
    vp.image_size = 32;
    CHECK(rasterize(ccw, vp).covered_count() > 0);
    CHECK(rasterize(cw, vp).covered_count() == 0);
}

TEST_CASE("rasterization is identical for any worker count") {
    Viewpoint vp;
    vp.radius = 1.9;
    vp.azimuth = 0.7;
    vp.elevation = -0.4;
    vp.image_size = 123;
    const GBuffer one = rasterize(cube(), vp, 1);
    for (unsigned w : {2u, 3u, 7u}) {
        const GBuffer many = rasterize(cube(), vp, w);
        bool identical = true;
        for (std::size_t i = 0; i < one.fragments.size(); ++i) identical &= same_bits(one.fragments[i], many.fragments[i]);
        CHECK(identical);
    }
}

TEST_CASE("bilinear footprint") {
    SUBCASE("texel centers hit a single texel") {
        const auto fp = bilinear_footprint(Eigen::Vector2d((2 + 0.5) / 8, 1.0 - (5 + 0.5) / 6), 6, 8);
        CHECK(fp.texels[0] == 5 * 8 + 2);
        CHECK(fp.weights[0] == doctest::Approx(1.0));
        CHECK(fp.weights.tail<3>().norm() == doctest::Approx(0.0));
    }
    SUBCASE("weights match the interpolation formula and sum to one") {
        std::mt19937 rng(3);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int i = 0; i < 200; ++i) {
            const Eigen::Vector2d uv(u(rng), u(rng));
            const auto fp = bilinear_footprint(uv, 7, 5);
            CHECK(fp.weights.sum() == doctest::Approx(1.0));
            CHECK(fp.weights.minCoeff() >= 0.0);
            // Reconstruct the sample position from the weights.
            const double x = uv.x() * 5 - 0.5, y = (1 - uv.y()) * 7 - 0.5;
            if (x > 0 && x < 4 && y > 0 && y < 6) {
                double cx = 0, cy = 0;
                for (int k = 0; k < 4; ++k) {
                    cx += fp.weights[k] * static_cast<double>(fp.texels[k] % 5);
                    cy += fp.weights[k] * static_cast<double>(fp.texels[k] / 5);
                }
                CHECK(cx == doctest::Approx(x));
                CHECK(cy == doctest::Approx(y));
            }
        }
    }
    SUBCASE("clamp to edge") {
        const auto fp = bilinear_footprint(Eigen::Vector2d(0.0, 1.0), 4, 4);
        for (int k = 0; k < 4; ++k) CHECK(fp.texels[k] == 0);
        CHECK(fp.weights.sum() == doctest::Approx(1.0));
    }
}

TEST_CASE("scatter plan reproduces the sequential scatter bit for bit") {
    Viewpoint vp;
    vp.radius = 2.0;
    vp.azimuth = 0.5;
    vp.elevation = 0.35;
    vp.image_size = 90;
    const GBuffer gb = rasterize(cube(), vp, 2);
    const Image<double> g = random_image(3, gb.rows, gb.cols, 11, -1.0, 1.0);
    const Image<double> expected = naive_backward(gb, g, 37, 41);
    for (unsigned w : {1u, 4u}) {
        const Image<double> got = backward_to_texture(gb, g, 37, 41, w);
        CHECK(got == expected);
    }
}

TEST_CASE("no gradient reaches texels outside every footprint") {
    Viewpoint vp;
    vp.radius = 2.5;
    vp.image_size = 40;
    const GBuffer gb = rasterize(cube(), vp);
    const Image<double> g(3, gb.rows, gb.cols, 1.0);
    const Image<double> grad = backward_to_texture(gb, g, 60, 60);

    std::vector<BilinearFootprint> fps;
    for (const auto& f : gb.fragments)
        if (f.face >= 0) fps.push_back(bilinear_footprint(f.uv.cast<double>(), 60, 60));
    const ScatterPlan plan(fps, 60 * 60);
    Mask in_plan = Mask::Constant(60, 60, false);
    for (auto t : plan.texels()) in_plan.data()[t] = true;
    for (Eigen::Index t = 0; t < 3600; ++t) {
        if (!in_plan.data()[t]) CHECK(grad.at(0, t) == 0.0);
        else CHECK(grad.at(0, t) > 0.0);
    }
    // Front face only: the touched texels lie in its atlas cell.
    for (auto t : plan.texels()) {
        CHECK(t % 60 <= 20);
        CHECK(t / 60 >= 29);
    }
}

TEST_CASE("backward rejects mismatched gradients") {
    Viewpoint vp;
    vp.image_size = 16;
    vp.radius = 3;
    const GBuffer gb = rasterize(cube(), vp);
    CHECK_THROWS_AS(backward_to_texture(gb, Image<double>(3, 15, 16), 8, 8), ShapeMismatch);
}

TEST_CASE("the projected centroid of a triangle interpolates the centroid uv") {
    const Mesh tri = parse("v -0.6 -0.5 0\nv 0.7 -0.4 0\nv -0.2 0.8 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n");
    Viewpoint vp;
    vp.radius = 2.0;
    vp.image_size = 301;
    const GBuffer gb = rasterize(tri, vp, 1);
    const Eigen::Vector3d centroid(-0.1 / 3, -0.1 / 3, 0.0);
    const auto proj = view_project(vp, centroid);
    const int c = static_cast<int>(std::floor((proj.ndc.x() + 1) / 2 * vp.image_size));
    const int r = static_cast<int>(std::floor((1 - proj.ndc.y()) / 2 * vp.image_size));
    const Fragment& f = gb.at(r, c);
    REQUIRE(f.face == 0);
    // Within one pixel of the centroid; the uv gradient is about 1/100 per pixel here.
    CHECK(std::abs(f.uv.x() - 1.0 / 3) < 0.02);
    CHECK(std::abs(f.uv.y() - 1.0 / 3) < 0.02);
}

TEST_CASE("backward matches finite differences of the rendered pixels") {
    Viewpoint vp;
    vp.radius = 2.1;
    vp.azimuth = 0.4;
    vp.elevation = 0.25;
    vp.image_size = 40;
    const GBuffer gb = rasterize(cube(), vp, 1);
    const int rows = 20, cols = 20;
    const Image<double> atlas = random_image(3, rows, cols, 4);
    const Image<double> upstream = random_image(3, gb.rows, gb.cols, 5, -1.0, 1.0);
    // Scalar probe: sum over pixels of upstream * bilinear sample.
    auto probe = [&](const Image<double>& a) {
        double s = 0.0;
        for (int r = 0; r < gb.rows; ++r)
            for (int c = 0; c < gb.cols; ++c) {
                const Fragment& f = gb.at(r, c);
                if (f.face < 0) continue;
                const auto fp = bilinear_footprint(f.uv.cast<double>(), rows, cols);
                for (int ch = 0; ch < 3; ++ch)
                    for (int k = 0; k < 4; ++k) s += upstream(ch, r, c) * fp.weights[k] * a.at(ch, fp.texels[k]);
            }
        return s;
    };
    const Image<double> grad = backward_to_texture(gb, upstream, rows, cols);
    int checked = 0;
    for (Eigen::Index t = 0; t < rows * cols; ++t) {
        if (grad.at(1, t) == 0.0) continue;
        const double h = 1e-5;
        Image<double> plus = atlas, minus = atlas;
        plus.at(1, t) += h;
        minus.at(1, t) -= h;
        const double fd = (probe(plus) - probe(minus)) / (2 * h);
        CHECK(std::abs(fd - grad.at(1, t)) <= 1e-4 * std::max(std::abs(fd), 1e-3));
        ++checked;
    }
    CHECK(checked > 20);
}
