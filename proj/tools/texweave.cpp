// texweave command-line front end: generate, render, validate, config.

#include <CLI11.hpp>

#include <iostream>

#include "texweave/error.hpp"
#include "texweave/pipeline.hpp"

using namespace texweave;

int main(int argc, char** argv) {
    CLI::App app{"Multi-view texture generation and projection for UV-mapped meshes"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "Run the per-view generation and projection loop");
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> denoiser, mesh, output;
    std::optional<double> lambda;
    std::optional<int> stride, atlas_size, render_size;
    std::optional<unsigned> workers;
    gen->add_option("--config", config_path, "Config JSON (a run manifest also works)");
    gen->add_option("--mesh", mesh, "Mesh OBJ path");
    gen->add_option("--seed", seed, "Random seed");
    gen->add_option("--denoiser", denoiser, "mock:<identity|constant:c|shrink:g|box_blur:k> or remote");
    gen->add_option("--lambda", lambda, "Gradient-penalty weight");
    gen->add_option("--stride", stride, "Window stride in latent cells");
    gen->add_option("--atlas-size", atlas_size, "Atlas side in texels");
    gen->add_option("--render-size", render_size, "Render side in pixels");
    gen->add_option("--workers", workers, "Worker threads (0 = hardware)");
    gen->add_option("--output", output, "Output directory");

    // render
    auto* ren = app.add_subcommand("render", "Render a textured mesh from one viewpoint");
    RenderRequest rr;
    std::string model = "sh";
    double sh_ambient = kDefaultAmbientW00;
    bool no_specular = false;
    ren->add_option("mesh", rr.mesh_path, "Mesh OBJ path")->required();
    ren->add_option("--atlas", rr.atlas_path, "Atlas image (PNG or PFM); default is a constant atlas");
    ren->add_option("--atlas-constant", rr.atlas_constant, "Value of the constant atlas");
    ren->add_option("--azimuth", rr.azimuth_degrees, "Azimuth in degrees");
    ren->add_option("--elevation", rr.elevation_degrees, "Elevation in degrees");
    ren->add_option("--radius-scale", rr.radius_scale, "Camera distance over bounding radius");
    ren->add_option("--fov", rr.fov_y_degrees, "Vertical field of view in degrees");
    ren->add_option("--size", rr.image_size, "Image side in pixels");
    ren->add_option("--model", model, "sh or cook_torrance")->check(CLI::IsMember({"sh", "cook_torrance"}));
    ren->add_option("--sh-ambient", sh_ambient, "Ambient SH coefficient w00");
    ren->add_flag("--no-specular", no_specular, "Drop the Cook-Torrance specular term");
    ren->add_option("--out", rr.output_prefix, "Output prefix");
    ren->add_option("--workers", rr.workers, "Worker threads (0 = hardware)");

    // validate
    auto* val = app.add_subcommand("validate", "Check a mesh's UV atlas and normals");
    std::string validate_path;
    int probe = 512;
    val->add_option("mesh", validate_path, "Mesh OBJ path")->required();
    val->add_option("--probe", probe, "UV probe resolution");

    // config
    auto* cfg_cmd = app.add_subcommand("config", "Configuration helpers");
    bool print_defaults = false;
    cfg_cmd->add_flag("--print-defaults", print_defaults, "Print the default configuration as JSON");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
            if (mesh) cfg.mesh_path = *mesh;
            if (seed) cfg.seed = *seed;
            if (denoiser) cfg.denoiser = *denoiser;
            if (lambda) cfg.lambda = *lambda;
            if (stride) cfg.window_stride = *stride;
            if (atlas_size) cfg.atlas_size = *atlas_size;
            if (render_size) cfg.render_size = *render_size;
            if (workers) cfg.workers = *workers;
            if (output) cfg.output_dir = *output;
            const RunManifest m = cmd_generate(cfg);
            if (!m.error.empty()) {
                std::cerr << "texweave: " << m.error << '\n';
                return m.exit_code;
            }
            std::cout << "wrote " << m.files.size() << " files to " << cfg.output_dir << '\n';
            return kExitOk;
        }
        if (*ren) {
            rr.shading.model = model == "sh" ? ShadingModel::SphericalHarmonics : ShadingModel::CookTorrance;
            rr.shading.sh = SHLighting::ambient(sh_ambient);
            rr.shading.specular = !no_specular;
            for (const auto& p : cmd_render(rr)) std::cout << p << '\n';
            return kExitOk;
        }
        if (*val) return cmd_validate(validate_path, std::cout, probe);
        if (*cfg_cmd) {
            if (!print_defaults) {
                std::cerr << cfg_cmd->help();
                return kExitInput;
            }
            std::cout << to_json(PipelineConfig{}).dump(2) << '\n';
            return kExitOk;
        }
    } catch (const std::exception& e) {
        std::cerr << "texweave: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return kExitOk;
}
