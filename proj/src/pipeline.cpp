#include "texweave/pipeline.hpp"

#include <Eigen/Geometry>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <random>
#include <set>

#include "texweave/error.hpp"
#include "texweave/image_io.hpp"
#include "texweave/rasterizer.hpp"

namespace texweave {

using nlohmann::json;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

const char* model_name(ShadingModel m) { return m == ShadingModel::CookTorrance ? "cook_torrance" : "sh"; }

ShadingModel parse_model(const std::string& s) {
    if (s == "sh") return ShadingModel::SphericalHarmonics;
    if (s == "cook_torrance") return ShadingModel::CookTorrance;
    throw ConfigError("unknown shading_model '" + s + "' (expected sh or cook_torrance)");
}

bool is_remote(const std::string& denoiser) { return denoiser == "remote"; }

MockKind mock_kind(const std::string& denoiser) {
    if (denoiser.rfind("mock:", 0) != 0) throw ConfigError("denoiser must be 'remote' or 'mock:<kind>', got '" + denoiser + "'");
    return MockKind::parse(std::string_view(denoiser).substr(5));
}

} // namespace

// --- Configuration -----------------------------------------------------------

void PipelineConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError(what);
    };
    require(atlas_size > 0, "atlas_size must be positive");
    require(render_size > 0, "render_size must be positive");
    require(md_output_size > 0 && md_output_size % kLatentDownscale == 0, "md_output_size must be a positive multiple of 8");
    require(window_size > 0 && window_size <= latent_size(), "window_size must fit the latent grid (md_output_size / 8)");
    require(window_stride >= 1, "window_stride must be >= 1");
    require(lambda >= 0.0, "lambda must be >= 0");
    require(sh_ambient >= 0.0, "sh_ambient must be >= 0");
    require(radius_scale > 1.0, "radius_scale must exceed 1 so the camera stays outside the mesh");
    require(fov_y_degrees > 0.0 && fov_y_degrees < 180.0, "fov_y_degrees must be in (0, 180)");
    require(!timesteps.empty() && timesteps.back() == 0, "timesteps must end at 0");
    for (std::size_t i = 1; i < timesteps.size(); ++i)
        require(timesteps[i] < timesteps[i - 1], "timesteps must be strictly decreasing");
    require(denoiser_timeout_s > 0.0, "denoiser_timeout_s must be positive");
    require(denoiser_retries >= 0, "denoiser_retries must be >= 0");
    require(max_in_flight >= 1, "max_in_flight must be >= 1");
    if (!is_remote(denoiser)) mock_kind(denoiser);
    require(steps_per_view >= 1, "steps_per_view must be >= 1");
    require(step_size > 0.0, "step_size must be positive");
    require(final_step_fraction > 0.0 && final_step_fraction <= 1.0, "final_step_fraction must be in (0, 1]");
    require(!output_dir.empty(), "output_dir must be set");
}

ProjectionConfig PipelineConfig::projection() const {
    ProjectionConfig p;
    p.lambda = lambda;
    p.steps = steps_per_view;
    p.step_size = step_size;
    p.render_size = render_size;
    p.final_step_fraction = final_step_fraction;
    p.workers = workers;
    return p;
}

ShadingConfig PipelineConfig::shading() const {
    ShadingConfig s;
    s.model = shading_model;
    s.sh = SHLighting::ambient(sh_ambient);
    return s;
}

std::vector<Viewpoint> PipelineConfig::viewpoints(const Mesh& mesh) const {
    return schedule_viewpoints(mesh.bounding_radius() * radius_scale, fov_y_degrees * kDeg, render_size, mesh.centroid());
}

json to_json(const PipelineConfig& c) {
    return json{
        {"mesh_path", c.mesh_path},
        {"atlas_size", c.atlas_size},
        {"render_size", c.render_size},
        {"md_output_size", c.md_output_size},
        {"window_size", c.window_size},
        {"window_stride", c.window_stride},
        {"lambda", c.lambda},
        {"shading_model", model_name(c.shading_model)},
        {"sh_ambient", c.sh_ambient},
        {"radius_scale", c.radius_scale},
        {"fov_y_degrees", c.fov_y_degrees},
        {"num_views", kScheduledViews},
        {"timesteps", c.timesteps},
        {"prompt", c.prompt},
        {"denoiser", c.denoiser},
        {"denoiser_url", c.denoiser_url},
        {"denoiser_timeout_s", c.denoiser_timeout_s},
        {"denoiser_retries", c.denoiser_retries},
        {"max_in_flight", c.max_in_flight},
        {"synthetic_atlas", c.synthetic_atlas},
        {"target_override", c.target_override},
        {"repaint_painted", c.repaint_painted},
        {"steps_per_view", c.steps_per_view},
        {"step_size", c.step_size},
        {"final_step_fraction", c.final_step_fraction},
        {"seed", c.seed},
        {"workers", c.workers},
        {"output_dir", c.output_dir},
    };
}

PipelineConfig config_from_json(const json& input) {
    const json& j = input.contains("config") && input.at("config").is_object() ? input.at("config") : input;
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    PipelineConfig c;
    static const std::set<std::string> known = [] {
        std::set<std::string> keys;
        const json defaults = to_json(PipelineConfig{});
        for (const auto& [k, v] : defaults.items()) keys.insert(k);
        return keys;
    }();
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        get("mesh_path", c.mesh_path);
        get("atlas_size", c.atlas_size);
        get("render_size", c.render_size);
        get("md_output_size", c.md_output_size);
        get("window_size", c.window_size);
        get("window_stride", c.window_stride);
        get("lambda", c.lambda);
        if (j.contains("shading_model")) c.shading_model = parse_model(j.at("shading_model").get<std::string>());
        get("sh_ambient", c.sh_ambient);
        get("radius_scale", c.radius_scale);
        get("fov_y_degrees", c.fov_y_degrees);
        if (j.contains("num_views") && j.at("num_views").get<int>() != kScheduledViews)
            throw ConfigError("num_views is fixed at " + std::to_string(kScheduledViews));
        get("timesteps", c.timesteps);
        get("prompt", c.prompt);
        get("denoiser", c.denoiser);
        get("denoiser_url", c.denoiser_url);
        get("denoiser_timeout_s", c.denoiser_timeout_s);
        get("denoiser_retries", c.denoiser_retries);
        get("max_in_flight", c.max_in_flight);
        get("synthetic_atlas", c.synthetic_atlas);
        get("target_override", c.target_override);
        get("repaint_painted", c.repaint_painted);
        get("steps_per_view", c.steps_per_view);
        get("step_size", c.step_size);
        get("final_step_fraction", c.final_step_fraction);
        get("seed", c.seed);
        get("workers", c.workers);
        get("output_dir", c.output_dir);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    try {
        return config_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

namespace {

json viewpoint_json(const Viewpoint& vp) {
    return json{{"azimuth_degrees", vp.azimuth / kDeg},
                {"elevation_degrees", vp.elevation / kDeg},
                {"radius", vp.radius},
                {"fov_y_degrees", vp.fov_y / kDeg},
                {"image_size", vp.image_size},
                {"target", {vp.target.x(), vp.target.y(), vp.target.z()}}};
}

} // namespace

json RunManifest::to_json() const {
    json views_json = json::array();
    for (const auto& v : views)
        views_json.push_back(json{{"index", v.index},
                                  {"viewpoint", viewpoint_json(v.viewpoint)},
                                  {"depth_map", v.depth_map},
                                  {"depth_preview", v.depth_preview},
                                  {"target_image", v.target_image},
                                  {"latent", v.latent},
                                  {"render", v.render},
                                  {"update_cells", v.update_cells},
                                  {"windows_per_step", v.windows_per_step},
                                  {"loss_curve", v.loss_curve},
                                  {"wall_time_s", v.wall_time_s}});
    return json{{"config", config},
                {"seed", seed},
                {"denoiser", denoiser},
                {"views", views_json},
                {"atlas_png", atlas_png},
                {"atlas_checkpoint", atlas_checkpoint},
                {"files", files},
                {"error", error.empty() ? json(nullptr) : json(error)},
                {"exit_code", exit_code}};
}

// --- Targets and atlases ----------------------------------------------------

Image<double> RemoteDecodedTargets::target(int, const GBuffer& gbuffer, const LatentGrid<float>& latent,
                                           const std::string& session_id) {
    const Image<float> decoded = remote_.decode(session_id, latent.values);
    return resize_bilinear(decoded, gbuffer.rows, gbuffer.cols).cast<double>();
}

Atlas procedural_atlas(int rows, int cols) {
    constexpr double tau = 2.0 * std::numbers::pi;
    Atlas atlas(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const double u = (c + 0.5) / cols, v = 1.0 - (r + 0.5) / rows;
            atlas.values(0, r, c) = 0.5 + 0.4 * std::sin(tau * 2.0 * u) * std::cos(tau * v);
            atlas.values(1, r, c) = 0.5 + 0.4 * std::sin(tau * (u + 2.0 * v) + 1.0);
            atlas.values(2, r, c) = 0.5 + 0.4 * std::cos(tau * 3.0 * u + 0.5) * std::sin(tau * 1.5 * v + 0.3);
        }
    return atlas;
}

Atlas random_atlas(int rows, int cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    Atlas atlas(rows, cols);
    for (int ch = 0; ch < 3; ++ch)
        for (Eigen::Index i = 0; i < atlas.texel_count(); ++i) atlas.values.at(ch, i) = uniform(rng);
    return atlas;
}

namespace {

Image<double> read_color_image(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    Image<double> img = ext == ".pfm" ? read_pfm(path).cast<double>() : read_png(path);
    if (img.channels() != 3) throw ShapeMismatch(path.string() + " is not an RGB image");
    return img;
}

} // namespace

Atlas read_atlas_image(const std::filesystem::path& path) { return Atlas(read_color_image(path)); }

std::unique_ptr<Denoiser> make_denoiser(const PipelineConfig& cfg) {
    if (!is_remote(cfg.denoiser)) return std::make_unique<MockDenoiser>(mock_kind(cfg.denoiser));
    std::string url = cfg.denoiser_url;
    if (const char* env = std::getenv(kDenoiserUrlEnv); env && *env) url = env;
    if (url.empty()) throw ConfigError(std::string("remote denoiser needs denoiser_url or ") + kDenoiserUrlEnv);
    return std::make_unique<RemoteDenoiser>(url, std::chrono::duration<double>(cfg.denoiser_timeout_s),
                                            cfg.denoiser_retries);
}

Mask update_mask(const GBuffer& gbuffer, const Mask& painted_texels, int latent_size, Mask* unpainted_pixels) {
    const int rows = static_cast<int>(painted_texels.rows()), cols = static_cast<int>(painted_texels.cols());
    Mask covered = gbuffer.mask();
    Mask unpainted = Mask::Constant(gbuffer.rows, gbuffer.cols, false);
    for (int r = 0; r < gbuffer.rows; ++r)
        for (int c = 0; c < gbuffer.cols; ++c) {
            if (!covered(r, c)) continue;
            const auto fp = bilinear_footprint(gbuffer.at(r, c).uv.cast<double>(), rows, cols);
            double painted = 0.0;
            for (int k = 0; k < 4; ++k)
                if (painted_texels.data()[fp.texels[k]]) painted += fp.weights[k];
            unpainted(r, c) = painted < 0.5;
        }
    const auto fresh = cell_fraction(unpainted, latent_size, latent_size);
    const auto cover = cell_fraction(covered, latent_size, latent_size);
    Mask cells = (cover > 0.0) && (fresh >= 0.5 * cover);
    if (unpainted_pixels) *unpainted_pixels = std::move(unpainted);
    return cells;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const DenoiserError*>(&e)) return kExitBackend;
    return kExitInput;
}

// --- generate ---------------------------------------------------------------

namespace {

class Outputs {
public:
    explicit Outputs(std::filesystem::path dir) : dir_(std::move(dir)) {}

    std::filesystem::path path(const std::string& name) {
        if (!seen_.insert(name).second) throw Error("output file " + name + " produced twice");
        files_.push_back(name);
        return dir_ / name;
    }
    const std::vector<std::string>& files() const { return files_; }
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    std::set<std::string> seen_;
    std::vector<std::string> files_;
};

std::string view_name(int k, const char* what) {
    std::ostringstream s;
    s << "view" << std::setw(2) << std::setfill('0') << k << '_' << what;
    return s.str();
}

void write_manifest(RunManifest& manifest, Outputs& out) {
    const auto path = out.path("manifest.json");
    manifest.files = out.files();
    std::ofstream f(path);
    f << manifest.to_json().dump(2) << '\n';
}

Image<double> depth_preview(const DepthMap& depth) {
    Image<double> img(1, static_cast<int>(depth.values.rows()), static_cast<int>(depth.values.cols()));
    img.plane(0) = depth.values.cast<double>();
    return img;
}

} // namespace

RunManifest cmd_generate(const PipelineConfig& cfg) {
    RunManifest manifest;
    std::unique_ptr<Denoiser> denoiser;
    std::unique_ptr<TargetProvider> targets;
    try {
        cfg.validate();
        denoiser = make_denoiser(cfg);
        if (auto* remote = dynamic_cast<RemoteDenoiser*>(denoiser.get())) {
            targets = std::make_unique<RemoteDecodedTargets>(*remote);
        } else {
            Atlas known = cfg.synthetic_atlas.empty() ? procedural_atlas(cfg.atlas_size, cfg.atlas_size)
                                                      : read_atlas_image(cfg.synthetic_atlas);
            if (known.rows() != cfg.atlas_size || known.cols() != cfg.atlas_size)
                throw ShapeMismatch("synthetic atlas must be atlas_size x atlas_size");
            targets = std::make_unique<SyntheticTargets>(std::move(known), cfg.shading());
        }
    } catch (const std::exception& e) {
        manifest.config = to_json(cfg);
        manifest.seed = cfg.seed;
        manifest.error = std::string("setup: ") + e.what();
        manifest.exit_code = exit_code_for(e);
        std::error_code ec;
        std::filesystem::create_directories(cfg.output_dir, ec);
        if (!ec) {
            Outputs out(cfg.output_dir);
            write_manifest(manifest, out);
        }
        return manifest;
    }
    return cmd_generate(cfg, *denoiser, *targets);
}

RunManifest cmd_generate(const PipelineConfig& cfg, Denoiser& denoiser, TargetProvider& targets) {
    RunManifest manifest;
    manifest.config = to_json(cfg);
    manifest.seed = cfg.seed;
    manifest.denoiser = denoiser.describe();

    std::string stage = "setup";
    int view = -1;
    std::optional<Outputs> out;
    try {
        cfg.validate();
        std::filesystem::create_directories(cfg.output_dir);
        out.emplace(cfg.output_dir);

        stage = "mesh";
        const Mesh mesh = load_obj(cfg.mesh_path);
        const auto viewpoints = cfg.viewpoints(mesh);
        const ShadingConfig shading = cfg.shading();
        const ProjectionConfig projection = cfg.projection();
        const int latent_size = cfg.latent_size();

        MdConfig md;
        md.window_size = cfg.window_size;
        md.stride = cfg.window_stride;
        md.max_in_flight = cfg.max_in_flight;

        Atlas atlas = random_atlas(cfg.atlas_size, cfg.atlas_size, cfg.seed);
        std::optional<std::string> prompt_handle;

        for (view = 0; view < static_cast<int>(viewpoints.size()); ++view) {
            const auto start = std::chrono::steady_clock::now();
            ViewRecord rec;
            rec.index = view;
            rec.viewpoint = viewpoints[static_cast<std::size_t>(view)];

            stage = "depth";
            const GBuffer gbuffer = rasterize(mesh, rec.viewpoint, cfg.workers);
            const DepthMap depth = normalize_depth(gbuffer.depth(), gbuffer.mask());
            rec.depth_map = view_name(view, "depth.pfm");
            write_pfm(out->path(rec.depth_map), depth.values);
            rec.depth_preview = view_name(view, "depth.png");
            write_png(out->path(rec.depth_preview), depth_preview(depth));

            stage = "update mask";
            Mask unpainted;
            const Mask cells = update_mask(gbuffer, atlas.touched, latent_size, &unpainted);
            rec.update_cells = cells.count();
            const bool restrict_to_unpainted = view > 0 && !cfg.repaint_painted;
            if (restrict_to_unpainted && !unpainted.any()) {
                rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                manifest.views.push_back(std::move(rec));
                continue;
            }

            Image<double> target;
            const std::string session = "texweave-" + std::to_string(cfg.seed) + "-" + view_name(view, "md");
            if (view == 0 && !cfg.target_override.empty()) {
                stage = "target override";
                target = resize_bilinear(read_color_image(cfg.target_override), gbuffer.rows, gbuffer.cols);
            } else {
                stage = "md";
                if (!prompt_handle) prompt_handle = denoiser.register_prompt(cfg.prompt);
                DepthMap latent_depth;
                Image<float> d(1, gbuffer.rows, gbuffer.cols);
                d.plane(0) = depth.values;
                latent_depth.values = resize_bilinear(d, latent_size, latent_size).plane(0);
                latent_depth.mask = cell_fraction(gbuffer.mask(), latent_size, latent_size) >= 0.5;

                const auto init = random_latent(kLatentChannels, latent_size, cfg.timesteps.front(),
                                                cfg.seed * 1000003ull + static_cast<std::uint64_t>(view));
                MdRunStats stats;
                const auto latent = run_md_denoising(init, denoiser, latent_depth, *prompt_handle, cells,
                                                     cfg.timesteps, md, &stats);
                rec.windows_per_step = stats.windows_per_step;
                rec.latent = view_name(view, "latent");
                out->path(rec.latent + ".f32");
                out->path(rec.latent + ".json");
                write_latent(out->dir() / rec.latent, latent);

                stage = "target";
                target = targets.target(view, gbuffer, latent, session);
                if (target.channels() != 3 || target.rows() != gbuffer.rows || target.cols() != gbuffer.cols)
                    throw ShapeMismatch("target image does not match the render size");
            }
            rec.target_image = view_name(view, "target.png");
            write_png(out->path(rec.target_image), target);

            stage = "projection";
            std::vector<ProjectionView> pv(1);
            pv[0].gbuffer = gbuffer;
            pv[0].target = std::move(target);
            if (restrict_to_unpainted) pv[0].target_mask = unpainted;
            OptimizationReport report;
            atlas = optimize_texture(std::move(atlas), pv, projection, shading, &report);
            rec.loss_curve = report.loss_curves.front();
            rec.render = view_name(view, "render.png");
            write_png(out->path(rec.render), render(gbuffer, atlas, shading));

            rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            manifest.views.push_back(std::move(rec));
        }
        view = -1;

        stage = "atlas export";
        manifest.atlas_png = "atlas.png";
        write_png(out->path(manifest.atlas_png), atlas.values);
        manifest.atlas_checkpoint = "atlas.pfm";
        save_atlas(out->path(manifest.atlas_checkpoint), atlas);
        write_png(out->path("touched.png"), atlas.touched);
    } catch (const std::exception& e) {
        manifest.error = (view >= 0 ? "view " + std::to_string(view) + " (" + stage + "): " : stage + ": ") + e.what();
        manifest.exit_code = exit_code_for(e);
    }
    if (out) {
        try {
            write_manifest(manifest, *out);
        } catch (const std::exception& e) {
            if (manifest.error.empty()) {
                manifest.error = std::string("manifest: ") + e.what();
                manifest.exit_code = kExitInput;
            }
        }
    }
    return manifest;
}

// --- render / validate -------------------------------------------------------

std::vector<std::string> cmd_render(const RenderRequest& req) {
    const Mesh mesh = load_obj(req.mesh_path);
    const Atlas atlas = req.atlas_path.empty() ? Atlas(req.atlas_size, req.atlas_size, req.atlas_constant)
                                               : read_atlas_image(req.atlas_path);
    Viewpoint vp;
    vp.azimuth = req.azimuth_degrees * kDeg;
    vp.elevation = req.elevation_degrees * kDeg;
    vp.radius = mesh.bounding_radius() * req.radius_scale;
    vp.fov_y = req.fov_y_degrees * kDeg;
    vp.image_size = req.image_size;
    vp.target = mesh.centroid();
    vp.validate();

    const GBuffer gbuffer = rasterize(mesh, vp, req.workers);
    const Image<double> image = render(gbuffer, atlas, req.shading);
    const std::string png = req.output_prefix + ".png", pfm = req.output_prefix + ".pfm",
                      mask = req.output_prefix + "_mask.png";
    write_png(png, image);
    write_pfm(pfm, image.cast<float>());
    write_png(mask, gbuffer.mask());
    return {png, pfm, mask};
}

int cmd_validate(const std::filesystem::path& mesh_path, std::ostream& out, int probe_resolution) {
    Mesh mesh;
    UVChartReport report;
    try {
        mesh = load_obj(mesh_path);
        report = validate_uv_atlas(mesh, probe_resolution);
    } catch (const std::exception& e) {
        out << "error: " << e.what() << '\n';
        return kExitInput;
    }

    double min_len = std::numeric_limits<double>::infinity(), max_len = 0.0;
    for (Eigen::Index i = 0; i < mesh.normals.rows(); ++i) {
        const double len = mesh.normals.row(i).norm();
        min_len = std::min(min_len, len);
        max_len = std::max(max_len, len);
    }
    // Corners whose normal points away from the face's winding normal.
    long long flipped = 0;
    for (Eigen::Index f = 0; f < mesh.num_faces(); ++f) {
        const Eigen::Vector3d a = mesh.positions.row(mesh.position_faces(f, 0));
        const Eigen::Vector3d b = mesh.positions.row(mesh.position_faces(f, 1));
        const Eigen::Vector3d c = mesh.positions.row(mesh.position_faces(f, 2));
        const Eigen::Vector3d fn = (b - a).cross(c - a);
        for (int k = 0; k < 3; ++k)
            if (fn.dot(mesh.normals.row(mesh.normal_faces(f, k))) < 0.0) ++flipped;
    }
    const Eigen::Vector3d center = mesh.centroid();

    out << "mesh: " << mesh_path.string() << '\n'
        << "vertices: " << mesh.num_vertices() << "  faces: " << mesh.num_faces() << "  uvs: " << mesh.uvs.rows()
        << '\n'
        << "uv probe: " << report.probe_resolution << "^2\n"
        << "uv overlap texels: " << report.overlap_texel_count << '\n'
        << "uv coverage: " << report.coverage_fraction << '\n'
        << "normals: " << mesh.normals.rows() << "  length range [" << min_len << ", " << max_len
        << "]  flipped corners: " << flipped << '\n'
        << "bounding sphere: center (" << center.x() << ", " << center.y() << ", " << center.z()
        << ")  radius " << mesh.bounding_radius() << '\n';
    if (report.overlap_texel_count > 0) {
        out << "status: FAIL (" << report.overlap_texel_count << " overlapping texels)\n";
        return kExitValidation;
    }
    out << "status: ok\n";
    return kExitOk;
}

} // namespace texweave
