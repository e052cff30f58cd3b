#pragma once

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "texweave/camera.hpp"
#include "texweave/denoiser.hpp"
#include "texweave/mesh.hpp"
#include "texweave/multidiffusion.hpp"
#include "texweave/projector.hpp"
#include "texweave/shading.hpp"
#include "texweave/texture_atlas.hpp"

namespace texweave {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitInput = 2, kExitBackend = 3 };

struct PipelineConfig {
    std::string mesh_path;
    int atlas_size = kDefaultAtlasSize;
    int render_size = kDefaultRenderSize;
    int md_output_size = kDefaultMdOutputSize;
    int window_size = kWindowSize;
    int window_stride = kDefaultStride;
    double lambda = kDefaultLambda;

    ShadingModel shading_model = ShadingModel::SphericalHarmonics;
    double sh_ambient = kDefaultAmbientW00;

    // View schedule: 8 ring views, then top and bottom.
    double radius_scale = kDefaultRadiusScale;
    double fov_y_degrees = 70.0;

    std::vector<int> timesteps = {999, 749, 499, 249, 0};
    std::string prompt;

    // "mock:<kind>" or "remote".
    std::string denoiser = "mock:identity";
    std::string denoiser_url;
    double denoiser_timeout_s = 60.0;
    int denoiser_retries = 2;
    unsigned max_in_flight = 4;

    // Target images for mocks are renders of this atlas (PNG or PFM); empty
    // selects the built-in procedural atlas.
    std::string synthetic_atlas;
    // Image for view 0, bypassing its denoising stage.
    std::string target_override;
    // Whether views after the first may overwrite texels painted earlier.
    bool repaint_painted = false;

    int steps_per_view = 400;
    double step_size = 1e-2;
    double final_step_fraction = kDefaultFinalStepFraction;

    std::uint64_t seed = 0;
    unsigned workers = 0;
    std::string output_dir = "texweave_out";

    /// Throws ConfigError.
    void validate() const;
    ProjectionConfig projection() const;
    ShadingConfig shading() const;
    std::vector<Viewpoint> viewpoints(const Mesh& mesh) const;
    int latent_size() const { return md_output_size / kLatentDownscale; }
};

nlohmann::json to_json(const PipelineConfig& cfg);
/// Missing keys keep their defaults; unknown keys throw ConfigError. A run
/// manifest is accepted too (its "config" entry is used).
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);

struct ViewRecord {
    int index = 0;
    Viewpoint viewpoint;
    std::string depth_map;
    std::string depth_preview;
    std::string target_image;
    std::string latent;
    std::string render;
    std::vector<double> loss_curve;
    std::vector<int> windows_per_step;
    long long update_cells = 0;
    double wall_time_s = 0.0;
};

struct RunManifest {
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::string denoiser;
    std::vector<ViewRecord> views;
    std::vector<std::string> files; // relative to output_dir, each once
    std::string atlas_png;
    std::string atlas_checkpoint;
    std::string error;
    int exit_code = kExitOk;

    nlohmann::json to_json() const;
};

/// Supplies the image a view's texture is projected from.
class TargetProvider {
public:
    virtual ~TargetProvider() = default;
    /// The returned image is render_size^2; latent is the view's denoised grid.
    virtual Image<double> target(int view, const GBuffer& gbuffer, const LatentGrid<float>& latent,
                                 const std::string& session_id) = 0;
};

/// Renders a fixed atlas with the run's shading.
class SyntheticTargets final : public TargetProvider {
public:
    SyntheticTargets(Atlas atlas, ShadingConfig shading) : atlas_(std::move(atlas)), shading_(std::move(shading)) {}
    Image<double> target(int, const GBuffer& gbuffer, const LatentGrid<float>&, const std::string&) override {
        return render(gbuffer, atlas_, shading_);
    }
    const Atlas& atlas() const { return atlas_; }

private:
    Atlas atlas_;
    ShadingConfig shading_;
};

/// Decodes the latent through the backend and resamples to the render size.
class RemoteDecodedTargets final : public TargetProvider {
public:
    explicit RemoteDecodedTargets(RemoteDenoiser& remote) : remote_(remote) {}
    Image<double> target(int view, const GBuffer& gbuffer, const LatentGrid<float>& latent,
                         const std::string& session_id) override;

private:
    RemoteDenoiser& remote_;
};

/// Smooth RGB pattern in [0.1, 0.9].
Atlas procedural_atlas(int rows, int cols);
/// Uniform [0, 1] texels.
Atlas random_atlas(int rows, int cols, std::uint64_t seed);
/// PNG or PFM by extension.
Atlas read_atlas_image(const std::filesystem::path& path);

std::unique_ptr<Denoiser> make_denoiser(const PipelineConfig& cfg);

/// Latent cells to repaint: cells where at least half of the covered pixels
/// map to texels no earlier view has painted.
Mask update_mask(const GBuffer& gbuffer, const Mask& painted_texels, int latent_size, Mask* unpainted_pixels = nullptr);

/// Full per-view loop. Never throws: failures are recorded in the manifest
/// (error, exit_code) and files written so far are kept.
RunManifest cmd_generate(const PipelineConfig& cfg);
RunManifest cmd_generate(const PipelineConfig& cfg, Denoiser& denoiser, TargetProvider& targets);

struct RenderRequest {
    std::string mesh_path;
    std::string atlas_path;                 // empty: constant atlas
    double atlas_constant = 1.0;
    int atlas_size = 256;                   // for the constant atlas
    double azimuth_degrees = 0.0;
    double elevation_degrees = 0.0;
    double radius_scale = kDefaultRadiusScale;
    double fov_y_degrees = 70.0;
    int image_size = 512;
    ShadingConfig shading;
    std::string output_prefix = "render"; // writes <prefix>.png, .pfm, _mask.png
    unsigned workers = 0;
};

/// Returns the written paths.
std::vector<std::string> cmd_render(const RenderRequest& request);

/// Prints the report; returns kExitOk, kExitValidation (UV overlap) or
/// kExitInput (unreadable mesh).
int cmd_validate(const std::filesystem::path& mesh_path, std::ostream& out, int probe_resolution = 512);

/// Maps an exception to the CLI exit code.
int exit_code_for(const std::exception& e);

} // namespace texweave
