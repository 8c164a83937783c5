#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mae/box.hpp"
#include "mae/rng.hpp"

namespace mae {

// Synthetic whole-scene data: persons rendered as colored part layouts with
// exact per-attribute label channels and a silhouette-union foreground mask.

constexpr int kBaseAttributes = 5;
inline const std::array<const char*, kBaseAttributes> kAttributeNames = {
    "head", "upper-clothes", "lower-clothes", "shoes", "bag"};

struct AttributePartition {
    int k = kBaseAttributes;
    std::vector<std::string> names;
    std::array<int, kBaseAttributes> merge_map{};  // base attribute -> merged channel

    static AttributePartition base() {
        AttributePartition p;
        p.k = 5;
        p.names.assign(kAttributeNames.begin(), kAttributeNames.end());
        p.merge_map = {0, 1, 2, 3, 4};
        return p;
    }

    // k=4 merges lower-clothes+shoes; k=3 additionally merges upper-clothes.
    static AttributePartition make(int k) {
        switch (k) {
            case 5:
                return base();
            case 4: {
                AttributePartition p;
                p.k = 4;
                p.names = {"head", "upper-clothes", "lower-clothes", "bag"};
                p.merge_map = {0, 1, 2, 2, 3};
                return p;
            }
            case 3: {
                AttributePartition p;
                p.k = 3;
                p.names = {"head", "all-clothes", "bag"};
                p.merge_map = {0, 1, 1, 1, 2};
                return p;
            }
            default:
                throw std::invalid_argument("AttributePartition: K must be 3, 4 or 5");
        }
    }
};

struct IntRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool empty() const { return x1 <= x0 || y1 <= y0; }
    IntRect clipped(int w, int h) const {
        return {std::clamp(x0, 0, w), std::clamp(y0, 0, h),
                std::clamp(x1, 0, w), std::clamp(y1, 0, h)};
    }
    bool operator==(const IntRect&) const = default;
};

inline IntRect pixel_rect(const Box& b) {
    return {static_cast<int>(std::lround(b.x1)), static_cast<int>(std::lround(b.y1)),
            static_cast<int>(std::lround(b.x2)), static_cast<int>(std::lround(b.y2))};
}

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

// Per-identity appearance, a pure function of (dataset seed, identity).
struct IdentityAppearance {
    std::array<Rgb, kBaseAttributes> part_color;
    Rgb body_color;
    bool has_bag = true;
    bool operator==(const IdentityAppearance&) const = default;
};

namespace scene_detail {

inline double palette_distance(const IdentityAppearance& a, const IdentityAppearance& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.part_color.size(); ++k) {
        double dr = a.part_color[k].r - b.part_color[k].r;
        double dg = a.part_color[k].g - b.part_color[k].g;
        double db = a.part_color[k].b - b.part_color[k].b;
        s += std::sqrt(dr * dr + dg * dg + db * db);
    }
    return s / static_cast<double>(a.part_color.size());
}

}  // namespace scene_detail

// Palettes are rejection-sampled so every identity pair stays visually
// distinguishable; without the separation floor, random draws occasionally
// produce near-duplicate outfits that no model could tell apart.
constexpr double kMinPaletteDistance = 110.0;

inline IdentityAppearance identity_appearance(std::uint64_t dataset_seed, int identity) {
    std::vector<IdentityAppearance> prior;
    for (int id = 0; id <= identity; ++id) {
        auto rng = make_rng(derive_seed(dataset_seed, 0xA77B, static_cast<std::uint64_t>(id)));
        std::uniform_int_distribution<int> byte(40, 255);
        IdentityAppearance best;
        double best_sep = -1.0;
        for (int attempt = 0; attempt < 64; ++attempt) {
            IdentityAppearance a;
            for (auto& c : a.part_color)
                c = {static_cast<std::uint8_t>(byte(rng)), static_cast<std::uint8_t>(byte(rng)),
                     static_cast<std::uint8_t>(byte(rng))};
            a.body_color = {static_cast<std::uint8_t>(byte(rng) / 2),
                            static_cast<std::uint8_t>(byte(rng) / 2),
                            static_cast<std::uint8_t>(byte(rng) / 2)};
            a.has_bag = (rng() & 3u) != 0;  // three in four identities carry a bag
            double sep = std::numeric_limits<double>::infinity();
            for (const auto& other : prior)
                sep = std::min(sep, scene_detail::palette_distance(a, other));
            if (sep > best_sep) {
                best_sep = sep;
                best = a;
            }
            if (best_sep >= kMinPaletteDistance) break;
        }
        prior.push_back(best);
    }
    return prior.back();
}

struct PersonInstance {
    int identity = -1;
    Box box;
    IdentityAppearance appearance;
    std::array<IntRect, kBaseAttributes> part_layout;  // absolute image coords
    std::array<bool, kBaseAttributes> visibility{};    // >=1 rendered pixel survives
    bool operator==(const PersonInstance&) const = default;
};

struct AttributeLabelMap {
    int k = 0, height = 0, width = 0;
    std::vector<std::uint8_t> channels;  // k * height * width, values in {0,1}

    static AttributeLabelMap zeros(int k, int h, int w) {
        AttributeLabelMap m;
        m.k = k;
        m.height = h;
        m.width = w;
        m.channels.assign(static_cast<std::size_t>(k) * h * w, 0);
        return m;
    }
    std::uint8_t& at(int c, int y, int x) {
        return channels[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    std::uint8_t at(int c, int y, int x) const {
        return channels[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    const std::uint8_t* channel(int c) const {
        return channels.data() + static_cast<std::size_t>(c) * height * width;
    }
    std::size_t pixel_count(int c) const {
        std::size_t n = 0;
        const std::uint8_t* p = channel(c);
        for (int i = 0; i < height * width; ++i) n += p[i];
        return n;
    }
    bool operator==(const AttributeLabelMap&) const = default;
};

struct SceneSample {
    int scene_id = 0;
    std::string split = "train";
    int height = 0, width = 0;
    std::vector<std::uint8_t> image;        // 3 * H * W, planar RGB
    std::vector<PersonInstance> persons;
    AttributeLabelMap label_map;            // K=5 base channels
    std::vector<std::uint8_t> global_mask;  // H * W, union of silhouettes
    bool operator==(const SceneSample&) const = default;
};

struct SceneSpec {
    int width = 96, height = 160;
    int min_persons = 1, max_persons = 4;
    int clutter_shapes = 12;
    double noise_level = 12.0;  // uint8 amplitude
};

namespace scene_detail {

// Proportional part layout inside a person box. Bands and columns are
// disjoint by construction so label channels never collide.
inline std::array<IntRect, kBaseAttributes> layout_parts(const IntRect& b) {
    const int w = b.width(), h = b.height();
    auto rows = [&](double a, double z) {
        return std::pair<int, int>{b.y0 + static_cast<int>(a * h), b.y0 + static_cast<int>(z * h)};
    };
    auto cols = [&](double a, double z) {
        return std::pair<int, int>{b.x0 + static_cast<int>(a * w), b.x0 + static_cast<int>(z * w)};
    };
    std::array<IntRect, kBaseAttributes> parts;
    auto [hy0, hy1] = rows(0.00, 0.15);
    auto [hx0, hx1] = cols(0.32, 0.68);
    parts[0] = {hx0, hy0, hx1, hy1};
    auto [uy0, uy1] = rows(0.18, 0.50);
    auto [ux0, ux1] = cols(0.22, 0.78);
    parts[1] = {ux0, uy0, ux1, uy1};
    auto [ly0, ly1] = rows(0.53, 0.84);
    auto [lx0, lx1] = cols(0.27, 0.73);
    parts[2] = {lx0, ly0, lx1, ly1};
    auto [sy0, sy1] = rows(0.87, 1.00);
    auto [sx0, sx1] = cols(0.25, 0.75);
    parts[3] = {sx0, sy0, sx1, sy1};
    auto [gy0, gy1] = rows(0.22, 0.55);
    auto [gx0, gx1] = cols(0.00, 0.18);
    parts[4] = {gx0, gy0, gx1, gy1};
    return parts;
}

inline IntRect body_rect(const IntRect& b) {
    const int w = b.width(), h = b.height();
    return {b.x0 + static_cast<int>(0.34 * w), b.y0 + static_cast<int>(0.10 * h),
            b.x0 + static_cast<int>(0.66 * w), b.y0 + static_cast<int>(0.92 * h)};
}

inline bool contains(const IntRect& r, int x, int y) {
    return x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1;
}

}  // namespace scene_detail

// Deterministic scene renderer. Persons are stamped in list order (painter's
// order, later wins per pixel); channels are derived from the final ownership
// map, so they stay pairwise disjoint even under occlusion.
inline SceneSample render_scene(const SceneSpec& spec, const std::vector<int>& identities,
                                std::uint64_t dataset_seed, int scene_id,
                                const std::string& split = "train") {
    if (spec.width < 32 || spec.height < 32)
        throw std::invalid_argument("render_scene: image extent must be >= 32x32");
    if (identities.size() > 8)
        throw std::invalid_argument("render_scene: at most 8 persons per scene");

    const int W = spec.width, H = spec.height;
    auto rng = make_rng(derive_seed(dataset_seed, 0x5CE4E, static_cast<std::uint64_t>(scene_id)));

    SceneSample s;
    s.scene_id = scene_id;
    s.split = split;
    s.width = W;
    s.height = H;
    s.image.assign(static_cast<std::size_t>(3) * H * W, 0);
    s.global_mask.assign(static_cast<std::size_t>(H) * W, 0);
    s.label_map = AttributeLabelMap::zeros(kBaseAttributes, H, W);

    // background: muted base tone, clutter shapes, pixel noise
    std::uniform_int_distribution<int> base(60, 120);
    Rgb bg{static_cast<std::uint8_t>(base(rng)), static_cast<std::uint8_t>(base(rng)),
           static_cast<std::uint8_t>(base(rng))};
    auto px = [&](int ch, int y, int x) -> std::uint8_t& {
        return s.image[(static_cast<std::size_t>(ch) * H + y) * W + x];
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            px(0, y, x) = bg.r;
            px(1, y, x) = bg.g;
            px(2, y, x) = bg.b;
        }
    // clutter stays in a muted band so figures remain the only saturated content
    std::uniform_int_distribution<int> byte(30, 150);
    for (int i = 0; i < spec.clutter_shapes; ++i) {
        int cw = 4 + static_cast<int>(rng() % 24), chh = 4 + static_cast<int>(rng() % 24);
        int cx = static_cast<int>(rng() % static_cast<std::uint64_t>(std::max(1, W - cw)));
        int cy = static_cast<int>(rng() % static_cast<std::uint64_t>(std::max(1, H - chh)));
        Rgb col{static_cast<std::uint8_t>(byte(rng)), static_cast<std::uint8_t>(byte(rng)),
                static_cast<std::uint8_t>(byte(rng))};
        for (int y = cy; y < cy + chh; ++y)
            for (int x = cx; x < cx + cw; ++x) {
                px(0, y, x) = col.r;
                px(1, y, x) = col.g;
                px(2, y, x) = col.b;
            }
    }
    if (spec.noise_level > 0) {
        std::uniform_real_distribution<double> noise(-spec.noise_level, spec.noise_level);
        for (auto& v : s.image)
            v = static_cast<std::uint8_t>(std::clamp(v + noise(rng), 0.0, 255.0));
    }

    // place persons: random non-crowding boxes inside the frame
    for (int identity : identities) {
        PersonInstance p;
        p.identity = identity;
        p.appearance = identity_appearance(dataset_seed, identity);
        std::uniform_int_distribution<int> hdist(std::min(40, H - 4), std::min(H - 4, 96));
        bool placed = false;
        for (int attempt = 0; attempt < 160 && !placed; ++attempt) {
            // prefer clear separation; relax the overlap cap only when the
            // canvas is too full (occluded figures are kept rare, not absent)
            double max_iou = attempt < 48 ? 0.02 : attempt < 72 ? 0.10 : 0.25;
            int bh = hdist(rng);
            int bw = std::max(14, static_cast<int>(bh * 0.42));
            if (bw >= W - 2) bw = W - 3;
            int bx = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(std::max(1, W - bw - 1)));
            int by = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(std::max(1, H - bh - 1)));
            Box cand{static_cast<double>(bx), static_cast<double>(by),
                     static_cast<double>(bx + bw), static_cast<double>(by + bh)};
            bool crowded = false;
            for (const auto& other : s.persons)
                if (iou(cand, other.box) > max_iou) crowded = true;
            if (crowded) continue;
            p.box = cand;
            placed = true;
        }
        if (!placed) continue;  // skip on a crowded canvas rather than fail
        IntRect pb = pixel_rect(p.box);
        p.part_layout = scene_detail::layout_parts(pb);
        if (!p.appearance.has_bag) p.part_layout[4] = IntRect{};
        s.persons.push_back(p);
    }

    // ownership stamping: -1 background; (person << 3) | code
    // code: 0..4 attribute, 5 body
    std::vector<int> owner(static_cast<std::size_t>(H) * W, -1);
    for (std::size_t pi = 0; pi < s.persons.size(); ++pi) {
        const auto& p = s.persons[pi];
        IntRect body = scene_detail::body_rect(pixel_rect(p.box)).clipped(W, H);
        for (int y = body.y0; y < body.y1; ++y)
            for (int x = body.x0; x < body.x1; ++x)
                owner[static_cast<std::size_t>(y) * W + x] = static_cast<int>(pi) * 8 + 5;
        for (int a = 0; a < kBaseAttributes; ++a) {
            IntRect r = p.part_layout[a].clipped(W, H);
            for (int y = r.y0; y < r.y1; ++y)
                for (int x = r.x0; x < r.x1; ++x)
                    owner[static_cast<std::size_t>(y) * W + x] = static_cast<int>(pi) * 8 + a;
        }
    }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            int o = owner[static_cast<std::size_t>(y) * W + x];
            if (o < 0) continue;
            int pi = o >> 3, code = o & 7;
            const auto& ap = s.persons[pi].appearance;
            Rgb col = (code == 5) ? ap.body_color : ap.part_color[code];
            px(0, y, x) = col.r;
            px(1, y, x) = col.g;
            px(2, y, x) = col.b;
            s.global_mask[static_cast<std::size_t>(y) * W + x] = 1;
            if (code < kBaseAttributes) s.label_map.at(code, y, x) = 1;
        }

    // visibility = at least one surviving pixel per attribute
    for (std::size_t pi = 0; pi < s.persons.size(); ++pi) {
        auto& p = s.persons[pi];
        for (int a = 0; a < kBaseAttributes; ++a) {
            bool vis = false;
            IntRect r = p.part_layout[a].clipped(W, H);
            for (int y = r.y0; y < r.y1 && !vis; ++y)
                for (int x = r.x0; x < r.x1 && !vis; ++x)
                    if (owner[static_cast<std::size_t>(y) * W + x] ==
                        static_cast<int>(pi) * 8 + a)
                        vis = true;
            p.visibility[a] = vis;
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Label crop / splice / merge / downsample
// ---------------------------------------------------------------------------

struct LabelCrop {
    int k = 0, height = 0, width = 0;
    std::vector<std::uint8_t> channels;
    std::uint8_t at(int c, int y, int x) const {
        return channels[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
};

inline LabelCrop crop_labels(const AttributeLabelMap& map, const Box& box) {
    IntRect r = pixel_rect(box).clipped(map.width, map.height);
    if (r.empty()) throw std::invalid_argument("crop_labels: zero-area box after clipping");
    LabelCrop c;
    c.k = map.k;
    c.height = r.height();
    c.width = r.width();
    c.channels.assign(static_cast<std::size_t>(c.k) * c.height * c.width, 0);
    for (int ch = 0; ch < map.k; ++ch)
        for (int y = 0; y < c.height; ++y)
            for (int x = 0; x < c.width; ++x)
                c.channels[(static_cast<std::size_t>(ch) * c.height + y) * c.width + x] =
                    map.at(ch, r.y0 + y, r.x0 + x);
    return c;
}

// Painter's order: later crops win per pixel (all channels replaced there).
inline AttributeLabelMap splice_crops(const std::vector<std::pair<LabelCrop, Box>>& crops,
                                      int canvas_h, int canvas_w) {
    int k = crops.empty() ? kBaseAttributes : crops[0].first.k;
    AttributeLabelMap out = AttributeLabelMap::zeros(k, canvas_h, canvas_w);
    for (const auto& [crop, box] : crops) {
        if (crop.k != k) throw std::invalid_argument("splice_crops: channel count mismatch");
        IntRect r = pixel_rect(box);
        if (r.x0 < 0 || r.y0 < 0 || r.x0 + crop.width > canvas_w || r.y0 + crop.height > canvas_h)
            throw std::invalid_argument("splice_crops: box outside canvas");
        for (int y = 0; y < crop.height; ++y)
            for (int x = 0; x < crop.width; ++x) {
                for (int ch = 0; ch < k; ++ch)
                    out.at(ch, r.y0 + y, r.x0 + x) = crop.at(ch, y, x);
            }
    }
    return out;
}

inline AttributeLabelMap merge_partition(const AttributeLabelMap& map,
                                         const AttributePartition& target) {
    if (map.k != kBaseAttributes)
        throw std::invalid_argument("merge_partition: input must have 5 base channels");
    AttributeLabelMap out = AttributeLabelMap::zeros(target.k, map.height, map.width);
    const int n = map.height * map.width;
    for (int a = 0; a < kBaseAttributes; ++a) {
        int dst = target.merge_map[a];
        const std::uint8_t* src = map.channel(a);
        std::uint8_t* d = out.channels.data() + static_cast<std::size_t>(dst) * n;
        for (int i = 0; i < n; ++i) d[i] = static_cast<std::uint8_t>(d[i] | src[i]);
    }
    return out;
}

// Coverage resampling in either direction: an output cell is 1 iff any input
// pixel its footprint covers is 1 (footprints tile the source exactly, so no
// set pixel is ever dropped when shrinking; growing degenerates to nearest).
inline std::vector<std::uint8_t> resample_mask(const std::uint8_t* mask, int h, int w,
                                               int out_h, int out_w) {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(out_h) * out_w, 0);
    for (int oy = 0; oy < out_h; ++oy) {
        int y0 = (oy * h) / out_h;
        int y1 = ((oy + 1) * h + out_h - 1) / out_h;
        for (int ox = 0; ox < out_w; ++ox) {
            int x0 = (ox * w) / out_w;
            int x1 = ((ox + 1) * w + out_w - 1) / out_w;
            std::uint8_t v = 0;
            for (int y = y0; y < y1 && !v; ++y)
                for (int x = x0; x < x1; ++x)
                    if (mask[static_cast<std::size_t>(y) * w + x]) {
                        v = 1;
                        break;
                    }
            out[static_cast<std::size_t>(oy) * out_w + ox] = v;
        }
    }
    return out;
}

inline std::vector<std::uint8_t> downsample_mask(const std::uint8_t* mask, int h, int w,
                                                 int out_h, int out_w) {
    if (out_h > h || out_w > w)
        throw std::invalid_argument("downsample_mask: target larger than source");
    return resample_mask(mask, h, w, out_h, out_w);
}

inline std::vector<std::uint8_t> downsample_mask(const std::vector<std::uint8_t>& mask, int h,
                                                 int w, int out_h, int out_w) {
    return downsample_mask(mask.data(), h, w, out_h, out_w);
}

inline std::vector<std::uint8_t> resample_mask(const std::vector<std::uint8_t>& mask, int h,
                                               int w, int out_h, int out_w) {
    return resample_mask(mask.data(), h, w, out_h, out_w);
}

inline AttributeLabelMap downsample_labels(const AttributeLabelMap& map, int out_h, int out_w) {
    AttributeLabelMap out = AttributeLabelMap::zeros(map.k, out_h, out_w);
    for (int c = 0; c < map.k; ++c) {
        auto ch = downsample_mask(map.channel(c), map.height, map.width, out_h, out_w);
        std::copy(ch.begin(), ch.end(),
                  out.channels.begin() + static_cast<std::size_t>(c) * out_h * out_w);
    }
    return out;
}

}  // namespace mae
