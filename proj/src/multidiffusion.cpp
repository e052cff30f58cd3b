#include "texweave/multidiffusion.hpp"

#include <algorithm>
#include <future>
#include <random>

namespace texweave {

std::vector<int> window_origins(int grid, int size, int stride) {
    if (size <= 0 || grid < size) throw WindowTooLarge(grid, size);
    if (stride < 1) throw ConfigError("window stride must be >= 1");
    std::vector<int> origins;
    for (int o = 0; o + size <= grid; o += stride) origins.push_back(o);
    if (origins.back() != grid - size) origins.push_back(grid - size);
    return origins;
}

std::vector<Window> tile_windows(int grid, int size, int stride) {
    const auto origins = window_origins(grid, size, stride);
    std::vector<Window> windows;
    windows.reserve(origins.size() * origins.size());
    for (int r : origins)
        for (int c : origins) windows.push_back(Window{r, c, size, 0.0});
    return windows;
}

double region_weight(const Window& window, const Mask& object_mask) {
    if (window.row < 0 || window.col < 0 || window.row + window.size > object_mask.rows() ||
        window.col + window.size > object_mask.cols())
        throw WindowTooLarge(static_cast<int>(object_mask.rows()), window.size);
    const auto inside = object_mask.block(window.row, window.col, window.size, window.size).count();
    return static_cast<double>(inside) / (static_cast<double>(window.size) * window.size);
}

std::vector<Window> filter_windows(std::span<const Window> windows, const Mask& update_mask) {
    std::vector<Window> kept;
    for (const auto& w : windows) {
        if (w.row + w.size > update_mask.rows() || w.col + w.size > update_mask.cols())
            throw WindowTooLarge(static_cast<int>(update_mask.rows()), w.size);
        if (update_mask.block(w.row, w.col, w.size, w.size).any()) kept.push_back(w);
    }
    return kept;
}

namespace {

void check_schedule(std::span<const int> schedule) {
    if (schedule.empty() || schedule.back() != 0) throw ConfigError("timestep schedule must end at 0");
    for (std::size_t i = 1; i < schedule.size(); ++i)
        if (schedule[i] >= schedule[i - 1]) throw ConfigError("timestep schedule must be strictly decreasing");
}

} // namespace

LatentGrid<float> run_md_denoising(LatentGrid<float> init, Denoiser& denoiser, const DepthMap& depth,
                                   const std::string& prompt_handle, const Mask& update_mask,
                                   std::span<const int> schedule, const MdConfig& cfg, MdRunStats* stats) {
    check_schedule(schedule);
    const int n = init.size();
    require_same_shape(n, n, static_cast<int>(depth.values.rows()), static_cast<int>(depth.values.cols()), "latent depth");
    require_same_shape(n, n, static_cast<int>(depth.mask.rows()), static_cast<int>(depth.mask.cols()), "object mask");
    require_same_shape(n, n, static_cast<int>(update_mask.rows()), static_cast<int>(update_mask.cols()), "update mask");

    // Geometry and weights do not change across timesteps.
    const auto tiled = tile_windows(n, cfg.window_size, cfg.stride);
    std::vector<Window> windows;
    for (auto w : filter_windows(tiled, update_mask)) {
        w.weight = region_weight(w, depth.mask);
        if (w.weight > 0.0) windows.push_back(w);
    }

    LatentGrid<float> latent = std::move(init);
    latent.timestep = schedule.front();
    const std::size_t in_flight = std::max(1u, cfg.max_in_flight);

    for (std::size_t step = 0; step + 1 < schedule.size(); ++step) {
        const int t = schedule[step];
        std::vector<DenoiseProposal<float>> proposals(windows.size());

        for (std::size_t begin = 0; begin < windows.size(); begin += in_flight) {
            const std::size_t end = std::min(windows.size(), begin + in_flight);
            std::vector<std::future<DenoiseResponse>> pending;
            for (std::size_t i = begin; i < end; ++i) {
                const Window& w = windows[i];
                DenoiseRequest req;
                req.session_id = cfg.session_id;
                req.timestep = t;
                req.window_row = w.row;
                req.window_col = w.col;
                req.latent = latent.values.crop(w.row, w.col, w.size, w.size);
                req.depth = depth.values.block(w.row, w.col, w.size, w.size);
                req.prompt_handle = prompt_handle;
                pending.push_back(std::async(end - begin > 1 ? std::launch::async : std::launch::deferred,
                                             [&denoiser, r = std::move(req)] { return denoiser.denoise(r); }));
            }
            // Collect in window order so the first failure reported is deterministic.
            std::vector<std::exception_ptr> errors(pending.size());
            std::vector<DenoiseResponse> responses(pending.size());
            for (std::size_t k = 0; k < pending.size(); ++k) {
                try {
                    responses[k] = pending[k].get();
                } catch (...) {
                    errors[k] = std::current_exception();
                }
            }
            for (std::size_t k = 0; k < pending.size(); ++k) {
                const Window& w = windows[begin + k];
                if (errors[k]) {
                    try {
                        std::rethrow_exception(errors[k]);
                    } catch (const std::exception& e) {
                        throw DenoiserFailure(e.what(), w.row, w.col, t);
                    }
                }
                DenoiseResponse& resp = responses[k];
                if (!resp.ok) throw DenoiserFailure(resp.message, w.row, w.col, t);
                if (resp.latent.channels() != latent.channels() || resp.latent.rows() != w.size ||
                    resp.latent.cols() != w.size)
                    throw DenoiserFailure("response latent has the wrong shape", w.row, w.col, t);
                proposals[begin + k] = DenoiseProposal<float>{w, std::move(resp.latent)};
            }
        }

        latent = md_step<float>(latent, proposals, cfg.weights).latent;
        latent.timestep = schedule[step + 1];
        if (stats) stats->windows_per_step.push_back(static_cast<int>(windows.size()));
    }
    return latent;
}

LatentGrid<float> random_latent(int channels, int size, int timestep, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    LatentGrid<float> g{Image<float>(channels, size, size), timestep};
    for (int c = 0; c < channels; ++c)
        for (Eigen::Index i = 0; i < g.values.plane(c).size(); ++i) g.values.at(c, i) = normal(rng);
    return g;
}

} // namespace texweave
