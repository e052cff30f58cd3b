#include "texweave/shading.hpp"

namespace texweave {

ShadingTerms shade_fragment(const ShadingConfig& cfg, const Fragment& frag, const Eigen::Vector3d& eye) {
    ShadingTerms t;
    const Eigen::Vector3d n = frag.normal.cast<double>();
    if (cfg.model == ShadingModel::SphericalHarmonics) {
        t.scale.setConstant(sh_shading(cfg.sh, n));
        return t;
    }
    const Eigen::Vector3d l = cfg.light.direction.normalized();
    t.scale = phong_diffuse(cfg.brdf.k_d, l, n) * cfg.light.intensity;
    if (cfg.specular) {
        const Eigen::Vector3d v = (eye - frag.position.cast<double>()).normalized();
        t.offset = cook_torrance_specular(cfg.brdf, l, v, n).cwiseProduct(cfg.light.intensity);
    }
    return t;
}

Image<double> render(const GBuffer& gbuffer, const Atlas& atlas, const ShadingConfig& cfg) {
    Image<double> out(3, gbuffer.rows, gbuffer.cols);
    for (int c = 0; c < 3; ++c) out.plane(c).setConstant(cfg.background[c]);
    for (std::size_t i = 0; i < gbuffer.fragments.size(); ++i) {
        const Fragment& f = gbuffer.fragments[i];
        if (f.face < 0) continue;
        const auto sample = sample_texture(atlas, f.uv.cast<double>());
        const ShadingTerms t = shade_fragment(cfg, f, gbuffer.eye);
        const Eigen::Vector3d rgb = sample.value.cwiseProduct(t.scale) + t.offset;
        for (int c = 0; c < 3; ++c) out.at(c, static_cast<Eigen::Index>(i)) = rgb[c];
    }
    return out;
}

Image<double> render_cook_torrance(const GBuffer& gbuffer, const Atlas& atlas, const BRDFParams& params,
                                   const LightSource& light, bool specular, const Eigen::Vector3d& background) {
    ShadingConfig cfg;
    cfg.model = ShadingModel::CookTorrance;
    cfg.brdf = params;
    cfg.light = light;
    cfg.specular = specular;
    cfg.background = background;
    return render(gbuffer, atlas, cfg);
}

Image<double> render_sh(const GBuffer& gbuffer, const Atlas& atlas, const SHLighting& lighting,
                        const Eigen::Vector3d& background) {
    ShadingConfig cfg;
    cfg.model = ShadingModel::SphericalHarmonics;
    cfg.sh = lighting;
    cfg.background = background;
    return render(gbuffer, atlas, cfg);
}

} // namespace texweave
