#pragma once

#include "mae/ops.hpp"
#include "mae/rng.hpp"
#include "mae/scene.hpp"

namespace mae {

struct NetworkConfig {
    int c1 = 64;        // stem output channels (paper 1024)
    int c3 = 10;        // global-attention output channels (paper 154)
    int c5 = 16;        // local-fusion output channels (paper 256)
    int k = 5;          // attribute partition size
    int roi = 14;       // RoIAlign output extent
    int embed_dim = 32; // per-branch embedding width (paper 128)
    int stem_stride = 4;  // 4 keeps enough feature rows per person at toy image sizes
    bool use_global_mask = true;  // Table-II style ablation toggle
    bool use_local = true;        // global-branch-only baseline when false
    std::uint64_t seed = 0;

    int lf_in_channels() const { return k * c3; }

    void validate() const {
        if (c1 < 4 || c1 % 4 != 0) throw std::invalid_argument("NetworkConfig: c1 must be a positive multiple of 4");
        if (c3 < 1 || c5 < 1) throw std::invalid_argument("NetworkConfig: channel counts must be >= 1");
        if (k < 3 || k > 5) throw std::invalid_argument("NetworkConfig: k must be 3, 4 or 5");
        if (embed_dim < 2) throw std::invalid_argument("NetworkConfig: embed_dim must be >= 2");
        if (stem_stride != 4 && stem_stride != 8)
            throw std::invalid_argument("NetworkConfig: stem_stride must be 4 or 8");
        if (roi < 2) throw std::invalid_argument("NetworkConfig: roi extent must be >= 2");
    }

    bool operator==(const NetworkConfig&) const = default;
};

namespace net_detail {

inline Tensor he_conv(std::mt19937_64& rng, int out_c, int in_c, int kh, int kw) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (in_c * kh * kw)));
    std::vector<double> v(static_cast<std::size_t>(out_c) * in_c * kh * kw);
    for (auto& x : v) x = dist(rng);
    return Tensor::from({out_c, in_c, kh, kw}, std::move(v), true);
}

inline Tensor he_linear(std::mt19937_64& rng, int out_d, int in_d) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / in_d));
    std::vector<double> v(static_cast<std::size_t>(out_d) * in_d);
    for (auto& x : v) x = dist(rng);
    return Tensor::from({out_d, in_d}, std::move(v), true);
}

inline Tensor zero_bias(int n) { return Tensor::zeros({n}, true); }

}  // namespace net_detail

// Stem surrogate: three conv/BN/ReLU/pool stages, image -> C1 x H/8 x W/8.
struct StemParams {
    Tensor w1, b1, w2, b2, w3, b3;
    BatchNormState bn1, bn2, bn3;
    int stride = 4;

    static StemParams make(const NetworkConfig& cfg, std::mt19937_64& rng) {
        StemParams p;
        p.stride = cfg.stem_stride;
        p.w1 = net_detail::he_conv(rng, cfg.c1 / 4, 3, 3, 3);
        p.b1 = net_detail::zero_bias(cfg.c1 / 4);
        p.bn1 = BatchNormState::make(cfg.c1 / 4);
        p.w2 = net_detail::he_conv(rng, cfg.c1 / 2, cfg.c1 / 4, 3, 3);
        p.b2 = net_detail::zero_bias(cfg.c1 / 2);
        p.bn2 = BatchNormState::make(cfg.c1 / 2);
        p.w3 = net_detail::he_conv(rng, cfg.c1, cfg.c1 / 2, 3, 3);
        p.b3 = net_detail::zero_bias(cfg.c1);
        p.bn3 = BatchNormState::make(cfg.c1);
        return p;
    }
};

// Global Attention Block weights: two stacked convs + ReLU, then a
// BN-wrapped projection down to C3.
struct GaParams {
    Tensor wg1, bg1, wg2, bg2, wg3, bg3;
    BatchNormState bn;

    static GaParams make(const NetworkConfig& cfg, std::mt19937_64& rng) {
        GaParams p;
        int mid = cfg.c1 / 4;
        p.wg1 = net_detail::he_conv(rng, mid, cfg.c1, 1, 1);
        p.bg1 = net_detail::zero_bias(mid);
        p.wg2 = net_detail::he_conv(rng, mid, mid, 3, 3);
        p.bg2 = net_detail::zero_bias(mid);
        p.wg3 = net_detail::he_conv(rng, cfg.c3, mid, 1, 1);
        p.bg3 = net_detail::zero_bias(cfg.c3);
        p.bn = BatchNormState::make(cfg.c3);
        return p;
    }
};

// Local Fusion Block weights: two 1x1-3x3-1x1 bottlenecks (the second is the
// residual branch) and a final reduction to C5.
struct LfParams {
    Tensor wl[9];
    Tensor bl[9];
    BatchNormState bn1, bn2, bn3;

    static LfParams make(const NetworkConfig& cfg, std::mt19937_64& rng) {
        LfParams p;
        int mid = cfg.c5;
        int dims_in[9] = {cfg.lf_in_channels(), mid, mid, mid, mid, mid, mid, mid, mid};
        int dims_out[9] = {mid, mid, mid, mid, mid, mid, mid, mid, cfg.c5};
        for (int i = 0; i < 9; ++i) {
            int ksz = (i % 3 == 1) ? 3 : 1;  // wl2, wl5, wl8 are the 3x3 layers
            p.wl[i] = net_detail::he_conv(rng, dims_out[i], dims_in[i], ksz, ksz);
            p.bl[i] = net_detail::zero_bias(dims_out[i]);
        }
        p.bn1 = BatchNormState::make(mid);
        p.bn2 = BatchNormState::make(mid);
        p.bn3 = BatchNormState::make(cfg.c5);
        return p;
    }
};

struct HeadParams {
    Tensor w, b;
    BatchNormState bn;
    Tensor fc_w, fc_b;

    static HeadParams make(const NetworkConfig& cfg, std::mt19937_64& rng) {
        HeadParams p;
        int mid = cfg.c1 / 2;
        p.w = net_detail::he_conv(rng, mid, cfg.c1, 3, 3);
        p.b = net_detail::zero_bias(mid);
        p.bn = BatchNormState::make(mid);
        p.fc_w = net_detail::he_linear(rng, cfg.embed_dim, mid);
        p.fc_b = net_detail::zero_bias(cfg.embed_dim);
        return p;
    }
};

struct MaeParams {
    NetworkConfig config;
    StemParams stem;
    GaParams ga;
    LfParams lf;
    HeadParams head;
    Tensor fc_local_w, fc_local_b;
    Tensor norm_scale, norm_bias;  // det_score = sigmoid(scale * (r - bias))

    static MaeParams make(const NetworkConfig& cfg) {
        cfg.validate();
        auto rng = make_rng(derive_seed(cfg.seed, 0x9A2A15));
        MaeParams p;
        p.config = cfg;
        p.stem = StemParams::make(cfg, rng);
        p.ga = GaParams::make(cfg, rng);
        p.lf = LfParams::make(cfg, rng);
        p.head = HeadParams::make(cfg, rng);
        p.fc_local_w = net_detail::he_linear(rng, cfg.embed_dim, cfg.c5);
        p.fc_local_b = net_detail::zero_bias(cfg.embed_dim);
        p.norm_scale = Tensor::scalar(1.0, true);
        p.norm_bias = Tensor::scalar(1.0, true);
        return p;
    }

    // Stable name -> tensor listing for the optimizer and checkpoints.
    std::vector<std::pair<std::string, Tensor>> named_tensors() {
        std::vector<std::pair<std::string, Tensor>> v;
        v.emplace_back("stem.w1", stem.w1);
        v.emplace_back("stem.b1", stem.b1);
        v.emplace_back("stem.w2", stem.w2);
        v.emplace_back("stem.b2", stem.b2);
        v.emplace_back("stem.w3", stem.w3);
        v.emplace_back("stem.b3", stem.b3);
        v.emplace_back("ga.wg1", ga.wg1);
        v.emplace_back("ga.bg1", ga.bg1);
        v.emplace_back("ga.wg2", ga.wg2);
        v.emplace_back("ga.bg2", ga.bg2);
        v.emplace_back("ga.wg3", ga.wg3);
        v.emplace_back("ga.bg3", ga.bg3);
        for (int i = 0; i < 9; ++i) {
            v.emplace_back("lf.wl" + std::to_string(i + 1), lf.wl[i]);
            v.emplace_back("lf.bl" + std::to_string(i + 1), lf.bl[i]);
        }
        v.emplace_back("head.w", head.w);
        v.emplace_back("head.b", head.b);
        v.emplace_back("head.fc_w", head.fc_w);
        v.emplace_back("head.fc_b", head.fc_b);
        v.emplace_back("fc_local_w", fc_local_w);
        v.emplace_back("fc_local_b", fc_local_b);
        v.emplace_back("norm_scale", norm_scale);
        v.emplace_back("norm_bias", norm_bias);
        for (auto& [name, bn] : named_bn()) {
            v.emplace_back(name + ".gamma", bn->gamma);
            v.emplace_back(name + ".beta", bn->beta);
        }
        return v;
    }

    std::vector<std::pair<std::string, BatchNormState*>> named_bn() {
        return {{"stem.bn1", &stem.bn1}, {"stem.bn2", &stem.bn2}, {"stem.bn3", &stem.bn3},
                {"ga.bn", &ga.bn},       {"lf.bn1", &lf.bn1},     {"lf.bn2", &lf.bn2},
                {"lf.bn3", &lf.bn3},     {"head.bn", &head.bn}};
    }

    void set_training(bool training) {
        for (auto& [name, bn] : named_bn()) bn->training = training;
    }

    void zero_grad() {
        for (auto& [name, t] : named_tensors()) t.zero_grad();
    }
};

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

// Pixels are standardized per channel within each image so that scene-level
// shifts (background color, lighting, noise floor) never reach the stem.
inline Tensor image_to_tensor(const SceneSample& s) {
    std::vector<double> v(s.image.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = s.image[i] / 255.0;
    const std::size_t hw = static_cast<std::size_t>(s.height) * s.width;
    for (int c = 0; c < 3; ++c) {
        double* ch = v.data() + c * hw;
        double mean = 0.0;
        for (std::size_t i = 0; i < hw; ++i) mean += ch[i];
        mean /= static_cast<double>(hw);
        double var = 0.0;
        for (std::size_t i = 0; i < hw; ++i) var += (ch[i] - mean) * (ch[i] - mean);
        var /= static_cast<double>(hw);
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t i = 0; i < hw; ++i) ch[i] = (ch[i] - mean) * inv;
    }
    return Tensor::from({3, s.height, s.width}, std::move(v));
}

inline Tensor mask_to_tensor(const std::vector<std::uint8_t>& m, int h, int w) {
    std::vector<double> v(m.begin(), m.end());
    return Tensor::from({1, h, w}, std::move(v));
}

inline Tensor stem_forward(const Tensor& image, StemParams& p) {
    Tensor x = avg_pool2(relu(batchnorm2d(conv2d(image, p.w1, p.b1, 1, 1), p.bn1)));
    x = avg_pool2(relu(batchnorm2d(conv2d(x, p.w2, p.b2, 1, 1), p.bn2)));
    x = relu(batchnorm2d(conv2d(x, p.w3, p.b3, 1, 1), p.bn3));
    if (p.stride == 8) x = avg_pool2(x);
    return x;
}

inline Tensor ga_block(const Tensor& f1, const Tensor& mask_down, GaParams& p,
                       bool use_global_mask = true) {
    Tensor f2 = use_global_mask ? mul_mask(f1, mask_down) : f1;
    Tensor f2p = relu(conv2d(conv2d(f2, p.wg1, p.bg1, 1, 0), p.wg2, p.bg2, 1, 1));
    return relu(batchnorm2d(conv2d(f2p, p.wg3, p.bg3, 1, 0), p.bn));
}

inline Tensor lf_block(const Tensor& f3_roi, const std::vector<Tensor>& roi_masks, LfParams& p,
                       int expected_k) {
    if (static_cast<int>(roi_masks.size()) != expected_k)
        throw std::invalid_argument("lf_block: mask count does not match K");
    std::vector<Tensor> parts;
    parts.reserve(roi_masks.size());
    for (const auto& m : roi_masks) parts.push_back(mul_mask(f3_roi, m));
    Tensor f4 = concat_channels(parts);
    Tensor f4p = relu(batchnorm2d(
        conv2d(conv2d(conv2d(f4, p.wl[0], p.bl[0], 1, 0), p.wl[1], p.bl[1], 1, 1),
               p.wl[2], p.bl[2], 1, 0),
        p.bn1));
    Tensor branch = batchnorm2d(
        conv2d(conv2d(conv2d(f4p, p.wl[3], p.bl[3], 1, 0), p.wl[4], p.bl[4], 1, 1),
               p.wl[5], p.bl[5], 1, 0),
        p.bn2);
    Tensor f4pp = add(branch, f4p);
    return relu(batchnorm2d(
        conv2d(conv2d(conv2d(f4pp, p.wl[6], p.bl[6], 1, 0), p.wl[7], p.bl[7], 1, 1),
               p.wl[8], p.bl[8], 1, 0),
        p.bn3));
}

inline Tensor head_forward(const Tensor& f1_roi, HeadParams& p) {
    Tensor x = avg_pool2(relu(batchnorm2d(conv2d(f1_roi, p.w, p.b, 1, 1), p.bn)));
    return linear(global_max_pool(x), p.fc_w, p.fc_b);
}

inline Tensor local_feature(const Tensor& f5, const Tensor& fc_w, const Tensor& fc_b) {
    return linear(global_max_pool(f5), fc_w, fc_b);
}

inline Tensor fuse_embed(const Tensor& g, const Tensor& l) {
    if (g.shape() != l.shape()) throw std::invalid_argument("fuse_embed: branch dim mismatch");
    return concat_channels({g, l});
}

// Norm/direction decomposition with a learned affine on the norm feeding the
// detection score.
struct ProposalEmbedding {
    Tensor e;          // fused feature
    Tensor r;          // scalar norm
    Tensor e_hat;      // unit direction
    Tensor det_score;  // scalar in (0,1)
};

inline ProposalEmbedding norm_aware_split(const Tensor& e, const Tensor& nscale,
                                          const Tensor& nbias) {
    ProposalEmbedding rec;
    rec.e = e;
    rec.r = l2_norm(e);
    rec.e_hat = div_scalar(e, rec.r);
    Tensor shifted = add(rec.r, mae::scale(nbias, -1.0));
    rec.det_score = sigmoid(mul(shifted, nscale));
    return rec;
}

struct SceneForward {
    Tensor f1;  // stem output
    Tensor f3;  // global-attention output
    std::vector<ProposalEmbedding> records;
};

// End-to-end forward: stem and GA run once per frame, LF/head per proposal.
inline SceneForward forward_scene(const SceneSample& sample, const std::vector<Box>& proposals,
                                  MaeParams& params, const AttributePartition& partition) {
    const NetworkConfig& cfg = params.config;
    if (partition.k != cfg.k)
        throw std::invalid_argument("forward_scene: partition K does not match config");
    if (sample.width % cfg.stem_stride != 0 || sample.height % cfg.stem_stride != 0)
        throw std::invalid_argument("forward_scene: image extent not divisible by stem stride");

    SceneForward out;
    out.f1 = stem_forward(image_to_tensor(sample), params.stem);
    const int fh = out.f1.shape()[1], fw = out.f1.shape()[2];
    Tensor mg = mask_to_tensor(
        downsample_mask(sample.global_mask, sample.height, sample.width, fh, fw), fh, fw);
    out.f3 = ga_block(out.f1, mg, params.ga, cfg.use_global_mask);

    AttributeLabelMap merged = merge_partition(sample.label_map, partition);
    for (const Box& raw : proposals) {
        Box box = raw.clipped(sample.width, sample.height);
        if (!box.valid()) throw std::invalid_argument("forward_scene: degenerate proposal box");
        Tensor g = head_forward(
            roi_align_crop(out.f1, box, sample.width, sample.height, cfg.roi, cfg.roi),
            params.head);
        Tensor e;
        if (cfg.use_local) {
            Tensor f3_roi =
                roi_align_crop(out.f3, box, sample.width, sample.height, cfg.roi, cfg.roi);
            LabelCrop crop = crop_labels(merged, box);
            std::vector<Tensor> roi_masks;
            roi_masks.reserve(partition.k);
            for (int a = 0; a < partition.k; ++a) {
                const std::uint8_t* ch =
                    crop.channels.data() + static_cast<std::size_t>(a) * crop.height * crop.width;
                auto down = resample_mask(ch, crop.height, crop.width, cfg.roi, cfg.roi);
                roi_masks.push_back(mask_to_tensor(down, cfg.roi, cfg.roi));
            }
            Tensor f5 = lf_block(f3_roi, roi_masks, params.lf, partition.k);
            Tensor l = local_feature(f5, params.fc_local_w, params.fc_local_b);
            e = fuse_embed(g, l);
        } else {
            e = g;
        }
        out.records.push_back(norm_aware_split(e, params.norm_scale, params.norm_bias));
    }
    return out;
}

}  // namespace mae
