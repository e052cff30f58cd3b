#include "texweave/projector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "texweave/parallel.hpp"

namespace texweave {

void ProjectionConfig::validate() const {
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (steps <= 0) throw ConfigError("steps must be positive");
    if (!(step_size > 0.0)) throw ConfigError("step_size must be positive");
    if (render_size <= 0) throw ConfigError("render_size must be positive");
    if (!(final_step_fraction > 0.0 && final_step_fraction <= 1.0))
        throw ConfigError("final_step_fraction must lie in (0, 1]");
}

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

void check_image(const Image<double>& img, const Mask& mask, const char* what) {
    if (img.channels() != 3) throw ShapeMismatch(std::string(what) + " must have 3 channels");
    require_same_shape(static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), img.rows(), img.cols(), what);
}

} // namespace

LossTerm projection_loss(const Image<double>& render, const Mask& mask, const Image<double>& target,
                         const Mask* target_mask) {
    check_image(render, mask, "render");
    check_image(target, mask, "target");
    const bool gated = target_mask && target_mask->size() != 0;
    if (gated)
        require_same_shape(static_cast<int>(mask.rows()), static_cast<int>(mask.cols()),
                           static_cast<int>(target_mask->rows()), static_cast<int>(target_mask->cols()), "target mask");

    LossTerm out;
    out.image_grad = Image<double>(3, render.rows(), render.cols());
    const auto count = mask.count();
    if (count == 0) return out;
    const double inv = 1.0 / static_cast<double>(count);
    double sum = 0.0;
    for (int r = 0; r < render.rows(); ++r) {
        for (int c = 0; c < render.cols(); ++c) {
            if (!mask(r, c) || (gated && !(*target_mask)(r, c))) continue;
            for (int ch = 0; ch < 3; ++ch) {
                const double d = render(ch, r, c) - target(ch, r, c);
                sum += d * d;
                out.image_grad(ch, r, c) = 2.0 * d * inv;
            }
        }
    }
    out.value = sum * inv;
    return out;
}

LossTerm gradient_penalty(const Image<double>& render, const Mask& mask) {
    check_image(render, mask, "render");
    LossTerm out;
    out.image_grad = Image<double>(3, render.rows(), render.cols());
    const int rows = render.rows(), cols = render.cols();
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (!mask(r, c)) continue;
            for (int ch = 0; ch < 3; ++ch) {
                if (c + 1 < cols && mask(r, c + 1)) {
                    const double d = render(ch, r, c + 1) - render(ch, r, c);
                    out.value += std::abs(d);
                    out.image_grad(ch, r, c + 1) += sign(d);
                    out.image_grad(ch, r, c) -= sign(d);
                }
                if (r + 1 < rows && mask(r + 1, c)) {
                    const double d = render(ch, r + 1, c) - render(ch, r, c);
                    out.value += std::abs(d);
                    out.image_grad(ch, r + 1, c) += sign(d);
                    out.image_grad(ch, r, c) -= sign(d);
                }
            }
        }
    }
    return out;
}

ViewObjective::ViewObjective(const ProjectionView& view, const ShadingConfig& shading, int atlas_rows,
                             int atlas_cols, double lambda, unsigned workers)
    : lambda_(lambda), workers_(workers) {
    const GBuffer& gb = view.gbuffer;
    if (view.target.channels() != 3) throw ShapeMismatch("target must have 3 channels");
    require_same_shape(gb.rows, gb.cols, view.target.rows(), view.target.cols(), "target");
    const bool gated = view.target_mask.size() != 0;
    if (gated)
        require_same_shape(gb.rows, gb.cols, static_cast<int>(view.target_mask.rows()),
                           static_cast<int>(view.target_mask.cols()), "target mask");

    std::vector<Eigen::Index> slot_of(gb.fragments.size(), -1);
    for (std::size_t i = 0; i < gb.fragments.size(); ++i) {
        if (gb.fragments[i].face < 0) continue;
        slot_of[i] = static_cast<Eigen::Index>(pixels_.size());
        pixels_.push_back(static_cast<Eigen::Index>(i));
    }
    const auto slots = static_cast<Eigen::Index>(pixels_.size());
    footprints_.resize(pixels_.size());
    scale_.resize(3, slots);
    offset_.resize(3, slots);
    target_.resize(3, slots);
    has_target_.resize(pixels_.size());
    right_.assign(pixels_.size(), -1);
    down_.assign(pixels_.size(), -1);
    left_.assign(pixels_.size(), -1);
    up_.assign(pixels_.size(), -1);

    for (Eigen::Index s = 0; s < slots; ++s) {
        const auto i = pixels_[static_cast<std::size_t>(s)];
        const Fragment& f = gb.fragments[static_cast<std::size_t>(i)];
        footprints_[static_cast<std::size_t>(s)] = bilinear_footprint(f.uv.cast<double>(), atlas_rows, atlas_cols);
        const ShadingTerms t = shade_fragment(shading, f, gb.eye);
        scale_.col(s) = t.scale;
        offset_.col(s) = t.offset;
        for (int c = 0; c < 3; ++c) target_(c, s) = view.target.at(c, i);
        const int r = static_cast<int>(i / gb.cols), col = static_cast<int>(i % gb.cols);
        has_target_[static_cast<std::size_t>(s)] = !gated || view.target_mask(r, col);
        if (col + 1 < gb.cols) right_[static_cast<std::size_t>(s)] = slot_of[static_cast<std::size_t>(i + 1)];
        if (r + 1 < gb.rows) down_[static_cast<std::size_t>(s)] = slot_of[static_cast<std::size_t>(i + gb.cols)];
        if (col > 0) left_[static_cast<std::size_t>(s)] = slot_of[static_cast<std::size_t>(i - 1)];
        if (r > 0) up_[static_cast<std::size_t>(s)] = slot_of[static_cast<std::size_t>(i - gb.cols)];
    }
    plan_ = ScatterPlan(footprints_, static_cast<Eigen::Index>(atlas_rows) * atlas_cols);

    std::vector<char> reached(static_cast<std::size_t>(atlas_rows) * static_cast<std::size_t>(atlas_cols), 0);
    for (std::size_t s = 0; s < footprints_.size(); ++s) {
        if (!has_target_[s]) continue;
        for (int k = 0; k < 4; ++k)
            if (footprints_[s].weights[k] != 0.0) reached[static_cast<std::size_t>(footprints_[s].texels[static_cast<std::size_t>(k)])] = 1;
    }
    free_.reserve(plan_.texels().size());
    for (const auto t : plan_.texels()) free_.push_back(reached[static_cast<std::size_t>(t)]);
}

ViewObjective::Value ViewObjective::evaluate(const Image<double>& atlas_values,
                                             Eigen::Matrix<double, 3, Eigen::Dynamic>* grad) const {
    const std::size_t slots = pixels_.size();
    Eigen::Matrix<double, 3, Eigen::Dynamic> rendered(3, static_cast<Eigen::Index>(slots));
    parallel_for(slots, workers_, [&](std::size_t b, std::size_t e) {
        for (std::size_t s = b; s < e; ++s) {
            const auto& fp = footprints_[s];
            Eigen::Vector3d tex = Eigen::Vector3d::Zero();
            for (int k = 0; k < 4; ++k) {
                const auto t = fp.texels[static_cast<std::size_t>(k)];
                tex += fp.weights[k] * Eigen::Vector3d(atlas_values.at(0, t), atlas_values.at(1, t), atlas_values.at(2, t));
            }
            const auto col = static_cast<Eigen::Index>(s);
            rendered.col(col) = tex.cwiseProduct(scale_.col(col)) + offset_.col(col);
        }
    });

    Value v;
    v.data = deterministic_sum(slots, workers_, [&](std::size_t s) {
        if (!has_target_[s]) return 0.0;
        const auto col = static_cast<Eigen::Index>(s);
        return (rendered.col(col) - target_.col(col)).squaredNorm();
    });
    v.penalty = deterministic_sum(slots, workers_, [&](std::size_t s) {
        const auto col = static_cast<Eigen::Index>(s);
        double p = 0.0;
        if (right_[s] >= 0) p += (rendered.col(right_[s]) - rendered.col(col)).cwiseAbs().sum();
        if (down_[s] >= 0) p += (rendered.col(down_[s]) - rendered.col(col)).cwiseAbs().sum();
        return p;
    });
    const double inv = slots == 0 ? 0.0 : 1.0 / static_cast<double>(slots);
    v.total = (v.data + lambda_ * v.penalty) * inv;

    if (grad) {
        Eigen::Matrix<double, 3, Eigen::Dynamic> slot_grad(3, static_cast<Eigen::Index>(slots));
        parallel_for(slots, workers_, [&](std::size_t b, std::size_t e) {
            for (std::size_t s = b; s < e; ++s) {
                const auto col = static_cast<Eigen::Index>(s);
                const Eigen::Vector3d x = rendered.col(col);
                Eigen::Vector3d g = Eigen::Vector3d::Zero();
                if (has_target_[s]) g = 2.0 * (x - target_.col(col));
                Eigen::Vector3d pen = Eigen::Vector3d::Zero();
                auto forward = [&](Eigen::Index other) {
                    if (other >= 0) pen -= (rendered.col(other) - x).unaryExpr(&sign);
                };
                auto backward = [&](Eigen::Index other) {
                    if (other >= 0) pen += (x - rendered.col(other)).unaryExpr(&sign);
                };
                forward(right_[s]);
                forward(down_[s]);
                backward(left_[s]);
                backward(up_[s]);
                g += lambda_ * pen;
                slot_grad.col(col) = (g * inv).cwiseProduct(scale_.col(col));
            }
        });
        *grad = plan_.gather(slot_grad, workers_);
    }
    return v;
}

Atlas optimize_texture(Atlas atlas, std::span<const ProjectionView> views, const ProjectionConfig& cfg,
                       const ShadingConfig& shading, OptimizationReport* report) {
    if (views.empty()) throw NoViews();
    cfg.validate();
    for (const auto& view : views) {
        const ViewObjective objective(view, shading, atlas.rows(), atlas.cols(), cfg.lambda, cfg.workers);
        const auto& texels = objective.touched_texels();
        const auto& free = objective.free_texels();
        for (std::size_t i = 0; i < texels.size(); ++i)
            if (free[i]) atlas.touched(texels[i] / atlas.cols(), texels[i] % atlas.cols()) = true;

        const auto n = static_cast<Eigen::Index>(texels.size());
        Eigen::Matrix<double, 3, Eigen::Dynamic> m = Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, n);
        Eigen::Matrix<double, 3, Eigen::Dynamic> v = Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, n);
        Eigen::Matrix<double, 3, Eigen::Dynamic> grad;
        std::vector<double> curve;
        curve.reserve(static_cast<std::size_t>(cfg.steps));
        double b1t = 1.0, b2t = 1.0;

        for (int step = 0; step < cfg.steps; ++step) {
            curve.push_back(objective.evaluate(atlas.values, &grad).total);
            b1t *= cfg.beta1;
            b2t *= cfg.beta2;
            const double progress = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 0.0;
            const double lr = cfg.step_size * (cfg.final_step_fraction +
                                               (1.0 - cfg.final_step_fraction) * 0.5 *
                                                   (1.0 + std::cos(std::numbers::pi * progress)));
            parallel_for(texels.size(), cfg.workers, [&](std::size_t b, std::size_t e) {
                for (std::size_t i = b; i < e; ++i) {
                    if (!free[i]) continue;
                    const auto col = static_cast<Eigen::Index>(i);
                    const Eigen::Index t = texels[i];
                    for (int c = 0; c < 3; ++c) {
                        const double g = grad(c, col);
                        m(c, col) = cfg.beta1 * m(c, col) + (1.0 - cfg.beta1) * g;
                        v(c, col) = cfg.beta2 * v(c, col) + (1.0 - cfg.beta2) * g * g;
                        const double mhat = m(c, col) / (1.0 - b1t);
                        const double vhat = v(c, col) / (1.0 - b2t);
                        double& x = atlas.values.at(c, t);
                        x = std::clamp(x - lr * mhat / (std::sqrt(vhat) + cfg.epsilon), 0.0, 1.0);
                    }
                }
            });
        }
        if (report) report->loss_curves.push_back(std::move(curve));
    }
    return atlas;
}

Atlas optimize_texture(Atlas atlas, const Mesh& mesh, std::span<const ViewTarget> views, const ProjectionConfig& cfg,
                       const ShadingConfig& shading, OptimizationReport* report) {
    if (views.empty()) throw NoViews();
    std::vector<ProjectionView> prepared;
    prepared.reserve(views.size());
    for (const auto& v : views) {
        require_same_shape(cfg.render_size, cfg.render_size, v.target.rows(), v.target.cols(), "target image");
        Viewpoint vp = v.viewpoint;
        vp.image_size = cfg.render_size;
        prepared.push_back(ProjectionView{rasterize(mesh, vp, cfg.workers), v.target, v.target_mask});
    }
    return optimize_texture(std::move(atlas), prepared, cfg, shading, report);
}

double psnr(const Image<double>& a, const Image<double>& b, const Mask& mask) {
    if (!a.same_shape(b)) throw ShapeMismatch("psnr operands differ in shape");
    double sum = 0.0;
    long long n = 0;
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c) {
            if (!mask(r, c)) continue;
            for (int ch = 0; ch < a.channels(); ++ch) {
                const double d = a(ch, r, c) - b(ch, r, c);
                sum += d * d;
                ++n;
            }
        }
    if (n == 0) return 0.0;
    const double mse = sum / static_cast<double>(n);
    return mse == 0.0 ? std::numeric_limits<double>::infinity() : -10.0 * std::log10(mse);
}

} // namespace texweave
