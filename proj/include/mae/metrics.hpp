#pragma once

#include <json.hpp>
#include <map>

#include "mae/box.hpp"
#include "mae/network.hpp"
#include "mae/objectives.hpp"

namespace mae {

// ---------------------------------------------------------------------------
// Detection metrics
// ---------------------------------------------------------------------------

struct ScoredBox {
    int scene_id = 0;
    Box box;
    double score = 0;
};

struct GtIndex {
    // scene -> (identity, box)
    std::map<int, std::vector<std::pair<int, Box>>> by_scene;

    static GtIndex from_scenes(const std::vector<const SceneSample*>& scenes) {
        GtIndex g;
        for (const auto* s : scenes)
            for (const auto& p : s->persons)
                g.by_scene[s->scene_id].emplace_back(p.identity, p.box);
        return g;
    }
    int total_boxes() const {
        int n = 0;
        for (const auto& [sid, v] : by_scene) n += static_cast<int>(v.size());
        return n;
    }
};

struct DetectionPr {
    double recall = 0, ap = 0;
};

// Greedy 1-to-1 matching by descending score (stable tie-break: input order),
// AP as exact area under the all-points precision/recall step curve.
inline DetectionPr detection_pr(const std::vector<ScoredBox>& dets, const GtIndex& gts,
                                double iou_thr = 0.5) {
    const int total_gt = gts.total_boxes();
    if (dets.empty() || total_gt == 0) return {0.0, 0.0};
    std::vector<std::size_t> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        if (dets[a].scene_id != dets[b].scene_id) return dets[a].scene_id < dets[b].scene_id;
        return a < b;
    });
    std::map<int, std::vector<bool>> used;
    for (const auto& [sid, v] : gts.by_scene) used[sid].assign(v.size(), false);
    int tp = 0;
    double ap = 0.0;
    int rank = 0;
    for (std::size_t idx : order) {
        ++rank;
        const auto& d = dets[idx];
        auto it = gts.by_scene.find(d.scene_id);
        int best = -1;
        double best_iou = iou_thr;
        if (it != gts.by_scene.end()) {
            for (std::size_t g = 0; g < it->second.size(); ++g) {
                if (used[d.scene_id][g]) continue;
                double v = iou(d.box, it->second[g].second);
                if (v >= best_iou) {
                    best_iou = v;
                    best = static_cast<int>(g);
                }
            }
        }
        if (best >= 0) {
            used[d.scene_id][best] = true;
            ++tp;
            ap += static_cast<double>(tp) / rank;
        }
    }
    return {static_cast<double>(tp) / total_gt, ap / total_gt};
}

// Score-ordered greedy NMS within each scene.
inline std::vector<std::size_t> nms_keep(const std::vector<ScoredBox>& dets, double nms_thr) {
    std::vector<std::size_t> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        return a < b;
    });
    std::vector<std::size_t> keep;
    for (std::size_t idx : order) {
        bool suppressed = false;
        for (std::size_t k : keep)
            if (dets[k].scene_id == dets[idx].scene_id &&
                iou(dets[k].box, dets[idx].box) > nms_thr)
                suppressed = true;
        if (!suppressed) keep.push_back(idx);
    }
    std::sort(keep.begin(), keep.end());
    return keep;
}

// ---------------------------------------------------------------------------
// Search metrics
// ---------------------------------------------------------------------------

struct GalleryEntry {
    int scene_id = 0;
    Box box;
    std::vector<double> e_hat;
    double det_score = 0;
};

struct QueryCase {
    int identity = -1;
    int probe_scene = -1;
    std::vector<double> e_hat;
    std::vector<int> candidate_scenes;
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Ranked TP flags for one query: positive iff the entry overlaps (IoU >= thr)
// the query identity's GT box in its scene, one TP per scene.
struct RankedQuery {
    std::vector<bool> tp;  // per ranked position
    int num_positive_scenes = 0;
};

inline RankedQuery rank_query(const QueryCase& q, const std::vector<GalleryEntry>& gallery,
                              const GtIndex& gts, double iou_thr = 0.5) {
    std::vector<std::size_t> cand;
    std::map<int, Box> positive_box;
    for (int sid : q.candidate_scenes) {
        auto it = gts.by_scene.find(sid);
        if (it != gts.by_scene.end())
            for (const auto& [pid, box] : it->second)
                if (pid == q.identity) positive_box[sid] = box;
    }
    for (std::size_t i = 0; i < gallery.size(); ++i)
        if (std::find(q.candidate_scenes.begin(), q.candidate_scenes.end(),
                      gallery[i].scene_id) != q.candidate_scenes.end())
            cand.push_back(i);
    std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
        double sa = cosine(q.e_hat, gallery[a].e_hat);
        double sb = cosine(q.e_hat, gallery[b].e_hat);
        if (sa != sb) return sa > sb;
        return a < b;  // stable gallery order on ties
    });
    RankedQuery out;
    out.num_positive_scenes = static_cast<int>(positive_box.size());
    std::map<int, bool> credited;
    for (std::size_t i : cand) {
        const auto& e = gallery[i];
        bool is_tp = false;
        auto it = positive_box.find(e.scene_id);
        if (it != positive_box.end() && !credited[e.scene_id] &&
            iou(e.box, it->second) >= iou_thr) {
            is_tp = true;
            credited[e.scene_id] = true;
        }
        out.tp.push_back(is_tp);
    }
    return out;
}

inline double average_precision(const RankedQuery& rq) {
    if (rq.num_positive_scenes == 0) return 0.0;
    int tp = 0;
    double ap = 0.0;
    for (std::size_t i = 0; i < rq.tp.size(); ++i)
        if (rq.tp[i]) {
            ++tp;
            ap += static_cast<double>(tp) / static_cast<double>(i + 1);
        }
    return ap / rq.num_positive_scenes;
}

struct SearchResult {
    double map = 0;
    std::vector<double> per_query_ap;  // scored queries only, in query order
    int scored_queries = 0;
    int excluded_queries = 0;
};

inline SearchResult search_map(const std::vector<QueryCase>& queries,
                               const std::vector<GalleryEntry>& gallery, const GtIndex& gts,
                               double iou_thr = 0.5, bool score_empty_as_zero = false) {
    SearchResult out;
    double acc = 0.0;
    for (const auto& q : queries) {
        RankedQuery rq = rank_query(q, gallery, gts, iou_thr);
        if (rq.num_positive_scenes == 0 && !score_empty_as_zero) {
            ++out.excluded_queries;
            continue;
        }
        double ap = average_precision(rq);
        out.per_query_ap.push_back(ap);
        acc += ap;
        ++out.scored_queries;
    }
    out.map = out.scored_queries > 0 ? acc / out.scored_queries : 0.0;
    return out;
}

inline std::vector<double> cmc(const std::vector<QueryCase>& queries,
                               const std::vector<GalleryEntry>& gallery, const GtIndex& gts,
                               int max_rank, double iou_thr = 0.5,
                               bool score_empty_as_zero = false) {
    std::vector<double> curve(max_rank, 0.0);
    int scored = 0;
    for (const auto& q : queries) {
        RankedQuery rq = rank_query(q, gallery, gts, iou_thr);
        if (rq.num_positive_scenes == 0 && !score_empty_as_zero) continue;
        ++scored;
        int first = -1;
        for (std::size_t i = 0; i < rq.tp.size(); ++i)
            if (rq.tp[i]) {
                first = static_cast<int>(i);
                break;
            }
        if (first >= 0)
            for (int k = first; k < max_rank; ++k) curve[k] += 1.0;
    }
    if (scored > 0)
        for (auto& v : curve) v /= scored;
    return curve;
}

// ---------------------------------------------------------------------------
// Model evaluation protocol
// ---------------------------------------------------------------------------

struct ProtocolConfig {
    double iou_thr = 0.5;
    double det_thr = 0.5;
    double nms_thr = 0.5;
    std::vector<int> gallery_sizes = {20, 40, 80};
    int max_rank = 10;
    bool score_empty_queries_zero = false;
};

struct MetricsReport {
    double recall = 0, ap = 0;
    double map = 0;
    std::vector<double> cmc_curve;
    int queries = 0, excluded_queries = 0;
    int gallery_entries = 0, gallery_scenes = 0;

    nlohmann::json to_json() const {
        return {{"detector", {{"recall", recall}, {"ap", ap}}},
                {"search", {{"map", map}, {"cmc", cmc_curve}}},
                {"queries", queries},
                {"excluded_queries", excluded_queries},
                {"gallery_entries", gallery_entries},
                {"gallery_scenes", gallery_scenes}};
    }
};

struct EvalData {
    std::vector<GalleryEntry> gallery;
    std::vector<ScoredBox> detections;  // post threshold + NMS, same order as gallery
    std::vector<QueryCase> queries;
    GtIndex gts;
    int num_scenes = 0;
};

// Runs the forward pass over the test split: thresholded, NMS-filtered
// detections become the gallery; each identity's least-occluded GT box (ties
// broken toward the earliest test scene) supplies the probe embedding.
inline EvalData extract_eval_data(MaeParams& params, const AttributePartition& partition,
                                  const std::vector<const SceneSample*>& scenes,
                                  const ProposalPolicy& policy, const ProtocolConfig& protocol,
                                  std::uint64_t seed) {
    params.set_training(false);
    EvalData out;
    out.gts = GtIndex::from_scenes(scenes);
    out.num_scenes = static_cast<int>(scenes.size());

    std::map<int, int> probe_scene;            // identity -> chosen probe scene id
    std::map<int, double> probe_occlusion;     // identity -> covered fraction there
    for (const auto* s : scenes)
        for (std::size_t i = 0; i < s->persons.size(); ++i) {
            const Box& b = s->persons[i].box;
            double covered = 0.0;  // later persons are painted on top of this one
            for (std::size_t j = i + 1; j < s->persons.size(); ++j) {
                const Box& o = s->persons[j].box;
                double ix = std::max(0.0, std::min(b.x2, o.x2) - std::max(b.x1, o.x1));
                double iy = std::max(0.0, std::min(b.y2, o.y2) - std::max(b.y1, o.y1));
                covered += ix * iy / b.area();
            }
            int id = s->persons[i].identity;
            if (!probe_scene.count(id) || covered < probe_occlusion[id] - 1e-12 ||
                (std::abs(covered - probe_occlusion[id]) <= 1e-12 &&
                 s->scene_id < probe_scene[id])) {
                probe_scene[id] = s->scene_id;
                probe_occlusion[id] = covered;
            }
        }
    std::map<int, std::vector<double>> probe_embedding;

    for (const auto* s : scenes) {
        ProposalSet ps = make_proposals(*s, policy, derive_seed(seed, 0xEA7, s->scene_id));
        std::vector<Box> boxes;
        for (const auto& p : ps.proposals) boxes.push_back(p.box);
        SceneForward fwd = forward_scene(*s, boxes, params, partition);
        std::vector<ScoredBox> dets;
        std::vector<std::vector<double>> embeds;
        for (std::size_t i = 0; i < ps.proposals.size(); ++i) {
            const auto& rec = fwd.records[i];
            if (ps.proposals[i].source == Proposal::Source::Gt &&
                probe_scene[ps.proposals[i].identity] == s->scene_id)
                probe_embedding[ps.proposals[i].identity] = rec.e_hat.values();
            double score = rec.det_score.item();
            if (score < protocol.det_thr) continue;
            dets.push_back({s->scene_id, ps.proposals[i].box, score});
            embeds.push_back(rec.e_hat.values());
        }
        for (std::size_t k : nms_keep(dets, protocol.nms_thr)) {
            out.detections.push_back(dets[k]);
            out.gallery.push_back({dets[k].scene_id, dets[k].box, embeds[k], dets[k].score});
        }
    }

    for (const auto& [identity, sid] : probe_scene) {
        if (!probe_embedding.count(identity)) continue;
        QueryCase q;
        q.identity = identity;
        q.probe_scene = sid;
        q.e_hat = probe_embedding[identity];
        for (const auto* s : scenes)
            if (s->scene_id != sid) q.candidate_scenes.push_back(s->scene_id);
        out.queries.push_back(std::move(q));
    }
    return out;
}

inline MetricsReport compute_report(const EvalData& data, const ProtocolConfig& protocol) {
    MetricsReport rep;
    DetectionPr pr = detection_pr(data.detections, data.gts, protocol.iou_thr);
    rep.recall = pr.recall;
    rep.ap = pr.ap;
    SearchResult sr = search_map(data.queries, data.gallery, data.gts, protocol.iou_thr,
                                 protocol.score_empty_queries_zero);
    rep.map = sr.map;
    rep.cmc_curve = cmc(data.queries, data.gallery, data.gts, protocol.max_rank,
                        protocol.iou_thr, protocol.score_empty_queries_zero);
    rep.queries = sr.scored_queries;
    rep.excluded_queries = sr.excluded_queries;
    rep.gallery_entries = static_cast<int>(data.gallery.size());
    rep.gallery_scenes = data.num_scenes;
    return rep;
}

inline MetricsReport evaluate_model(MaeParams& params, const AttributePartition& partition,
                                    const std::vector<const SceneSample*>& scenes,
                                    const ProposalPolicy& policy, const ProtocolConfig& protocol,
                                    std::uint64_t seed) {
    EvalData data = extract_eval_data(params, partition, scenes, policy, protocol, seed);
    return compute_report(data, protocol);
}

// ---------------------------------------------------------------------------
// Gallery-size sweep with nested distractor growth
// ---------------------------------------------------------------------------

struct SweepRow {
    int size = 0;
    double map = 0, rank1 = 0, rank5 = 0, rank10 = 0;
    std::vector<double> per_query_ap;
};

inline std::vector<SweepRow> gallery_sweep(const EvalData& data, const ProtocolConfig& protocol,
                                           std::vector<int> sizes, std::uint64_t seed) {
    if (!std::is_sorted(sizes.begin(), sizes.end()))
        throw std::invalid_argument("gallery_sweep: sizes must be ascending");
    if (!sizes.empty() && sizes.back() > data.num_scenes)
        throw std::invalid_argument("gallery_sweep: size exceeds available scenes");

    // per query: positive scenes always in, then a nested shuffled distractor
    // prefix grows with the size
    struct QueryPools {
        std::vector<int> positives;
        std::vector<int> distractors;
    };
    std::vector<QueryPools> pools(data.queries.size());
    for (std::size_t qi = 0; qi < data.queries.size(); ++qi) {
        const auto& q = data.queries[qi];
        for (int sid : q.candidate_scenes) {
            bool pos = false;
            auto it = data.gts.by_scene.find(sid);
            if (it != data.gts.by_scene.end())
                for (const auto& [pid, box] : it->second)
                    if (pid == q.identity) pos = true;
            (pos ? pools[qi].positives : pools[qi].distractors).push_back(sid);
        }
        auto rng = make_rng(derive_seed(seed, 0x5EEF, qi));
        std::shuffle(pools[qi].distractors.begin(), pools[qi].distractors.end(), rng);
    }

    std::vector<SweepRow> rows;
    for (int size : sizes) {
        std::vector<QueryCase> sized;
        for (std::size_t qi = 0; qi < data.queries.size(); ++qi) {
            QueryCase q = data.queries[qi];
            q.candidate_scenes = pools[qi].positives;
            int need = size - static_cast<int>(q.candidate_scenes.size());
            for (int i = 0; i < need && i < static_cast<int>(pools[qi].distractors.size()); ++i)
                q.candidate_scenes.push_back(pools[qi].distractors[i]);
            sized.push_back(std::move(q));
        }
        SearchResult sr = search_map(sized, data.gallery, data.gts, protocol.iou_thr,
                                     protocol.score_empty_queries_zero);
        auto curve = cmc(sized, data.gallery, data.gts, std::max(10, protocol.max_rank),
                         protocol.iou_thr, protocol.score_empty_queries_zero);
        SweepRow row;
        row.size = size;
        row.map = sr.map;
        row.rank1 = curve.empty() ? 0.0 : curve[0];
        row.rank5 = curve.size() > 4 ? curve[4] : row.rank1;
        row.rank10 = curve.size() > 9 ? curve[9] : row.rank5;
        row.per_query_ap = sr.per_query_ap;
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace mae
