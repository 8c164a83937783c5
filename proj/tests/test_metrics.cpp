#include "mae/metrics.hpp"

#include <gtest/gtest.h>

#include "grad_check.hpp"
#include "mae/dataset.hpp"

namespace {

using namespace mae;

// ---------------------------------------------------------------------------
// IoU
// ---------------------------------------------------------------------------

TEST(Iou, HandValues) {
    Box a{0, 0, 2, 2};
    EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
    EXPECT_DOUBLE_EQ(iou(a, Box{5, 5, 7, 7}), 0.0);
    EXPECT_DOUBLE_EQ(iou(a, Box{1, 1, 3, 3}), 1.0 / 7.0);
    EXPECT_DOUBLE_EQ(iou(Box{0, 0, 4, 4}, Box{0, 0, 2, 4}), 0.5);
    EXPECT_THROW(iou(a, Box{3, 3, 3, 5}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Detection PR against an independent oracle
// ---------------------------------------------------------------------------

// Naive re-derivation: walk every prefix cutoff of the score-ranked list and
// integrate the all-points precision/recall step curve.
DetectionPr oracle_detection_pr(std::vector<ScoredBox> dets, const GtIndex& gts, double thr) {
    int total_gt = gts.total_boxes();
    if (dets.empty() || total_gt == 0) return {0.0, 0.0};
    std::vector<std::size_t> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        if (dets[a].scene_id != dets[b].scene_id) return dets[a].scene_id < dets[b].scene_id;
        return a < b;
    });
    std::map<std::pair<int, int>, bool> taken;
    std::vector<int> is_tp;
    for (std::size_t idx : order) {
        const auto& d = dets[idx];
        int pick = -1;
        double best = thr;
        auto it = gts.by_scene.find(d.scene_id);
        if (it != gts.by_scene.end())
            for (int g = 0; g < static_cast<int>(it->second.size()); ++g) {
                if (taken[{d.scene_id, g}]) continue;
                double v = iou(d.box, it->second[g].second);
                if (v >= best) {
                    best = v;
                    pick = g;
                }
            }
        if (pick >= 0) taken[{d.scene_id, pick}] = true;
        is_tp.push_back(pick >= 0 ? 1 : 0);
    }
    double ap = 0.0;
    int tp = 0;
    double prev_recall = 0.0;
    for (std::size_t k = 0; k < is_tp.size(); ++k) {
        tp += is_tp[k];
        double recall = static_cast<double>(tp) / total_gt;
        double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
        if (is_tp[k]) {
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
    }
    return {static_cast<double>(tp) / total_gt, ap};
}

TEST(DetectionPr, TrivialCases) {
    GtIndex gts;
    gts.by_scene[0] = {{0, Box{10, 10, 30, 50}}};
    DetectionPr hit = detection_pr({{0, Box{10, 10, 30, 50}, 0.9}}, gts);
    EXPECT_DOUBLE_EQ(hit.recall, 1.0);
    EXPECT_DOUBLE_EQ(hit.ap, 1.0);
    DetectionPr miss = detection_pr({{0, Box{40, 40, 60, 60}, 0.9}}, gts);
    EXPECT_DOUBLE_EQ(miss.recall, 0.0);
    EXPECT_DOUBLE_EQ(miss.ap, 0.0);
    EXPECT_DOUBLE_EQ(detection_pr({}, gts).ap, 0.0);
}

TEST(DetectionPr, FalsePositiveBeforeTruePositiveLowersAp) {
    GtIndex gts;
    gts.by_scene[0] = {{0, Box{10, 10, 30, 50}}};
    DetectionPr pr = detection_pr(
        {{0, Box{60, 60, 80, 90}, 0.9}, {0, Box{10, 10, 30, 50}, 0.5}}, gts);
    EXPECT_DOUBLE_EQ(pr.recall, 1.0);
    EXPECT_DOUBLE_EQ(pr.ap, 0.5);  // TP at rank 2
}

TEST(DetectionPr, MatchesOracleOnRandomInstances) {
    auto rng = make_rng(41);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        GtIndex gts;
        int scenes = 1 + static_cast<int>(rng() % 3);
        for (int s = 0; s < scenes; ++s) {
            int n = 1 + static_cast<int>(rng() % 3);
            for (int g = 0; g < n; ++g) {
                double x = unit(rng) * 60, y = unit(rng) * 60;
                gts.by_scene[s].push_back(
                    {g, Box{x, y, x + 10 + unit(rng) * 20, y + 10 + unit(rng) * 20}});
            }
        }
        std::vector<ScoredBox> dets;
        int nd = static_cast<int>(rng() % 10);
        for (int d = 0; d < nd; ++d) {
            int s = static_cast<int>(rng() % scenes);
            if (rng() & 1u) {
                const auto& g = gts.by_scene[s][rng() % gts.by_scene[s].size()].second;
                double dx = (unit(rng) - 0.5) * 8, dy = (unit(rng) - 0.5) * 8;
                dets.push_back({s, Box{g.x1 + dx, g.y1 + dy, g.x2 + dx, g.y2 + dy}, unit(rng)});
            } else {
                double x = unit(rng) * 80, y = unit(rng) * 80;
                dets.push_back({s, Box{x, y, x + 5 + unit(rng) * 15, y + 5 + unit(rng) * 15},
                                unit(rng)});
            }
        }
        DetectionPr got = detection_pr(dets, gts, 0.5);
        DetectionPr want = oracle_detection_pr(dets, gts, 0.5);
        EXPECT_NEAR(got.recall, want.recall, 1e-12) << "trial " << trial;
        EXPECT_NEAR(got.ap, want.ap, 1e-12) << "trial " << trial;
    }
}

// ---------------------------------------------------------------------------
// NMS
// ---------------------------------------------------------------------------

TEST(Nms, SuppressesOverlapsKeepsBestScore) {
    std::vector<ScoredBox> dets = {{0, Box{0, 0, 10, 10}, 0.6},
                                   {0, Box{1, 1, 11, 11}, 0.9},
                                   {0, Box{40, 40, 50, 50}, 0.3},
                                   {1, Box{0, 0, 10, 10}, 0.1}};
    auto keep = nms_keep(dets, 0.5);
    EXPECT_EQ(keep, (std::vector<std::size_t>{1, 2, 3}));  // cross-scene never suppresses
}

// ---------------------------------------------------------------------------
// Search metrics against an independent oracle
// ---------------------------------------------------------------------------

struct OracleResult {
    double ap = 0;
    int first_tp_rank = -1;  // 0-based; -1 if none
    int positives = 0;
};

OracleResult oracle_query(const QueryCase& q, const std::vector<GalleryEntry>& gallery,
                          const GtIndex& gts, double thr) {
    // collect candidates with their similarity, sort by (-sim, index)
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < gallery.size(); ++i)
        for (int sid : q.candidate_scenes)
            if (gallery[i].scene_id == sid) {
                double sim = 0;
                for (std::size_t d = 0; d < q.e_hat.size(); ++d)
                    sim += q.e_hat[d] * gallery[i].e_hat[d];
                cand.push_back({sim, i});
            }
    std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    OracleResult out;
    std::set<int> positive_scenes, credited;
    for (int sid : q.candidate_scenes) {
        auto it = gts.by_scene.find(sid);
        if (it == gts.by_scene.end()) continue;
        for (const auto& [pid, box] : it->second)
            if (pid == q.identity) positive_scenes.insert(sid);
    }
    out.positives = static_cast<int>(positive_scenes.size());
    int tp = 0;
    for (std::size_t r = 0; r < cand.size(); ++r) {
        const auto& e = gallery[cand[r].second];
        if (!positive_scenes.count(e.scene_id) || credited.count(e.scene_id)) continue;
        Box gt_box;
        for (const auto& [pid, box] : gts.by_scene.at(e.scene_id))
            if (pid == q.identity) gt_box = box;
        if (iou(e.box, gt_box) >= thr) {
            credited.insert(e.scene_id);
            ++tp;
            out.ap += static_cast<double>(tp) / static_cast<double>(r + 1);
            if (out.first_tp_rank < 0) out.first_tp_rank = static_cast<int>(r);
        }
    }
    if (out.positives > 0) out.ap /= out.positives;
    return out;
}

std::vector<double> random_unit(std::mt19937_64& rng, int dim) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(dim);
    double s = 0;
    for (auto& x : v) {
        x = n(rng);
        s += x * x;
    }
    s = std::sqrt(s);
    for (auto& x : v) x /= s;
    return v;
}

struct RandomInstance {
    std::vector<GalleryEntry> gallery;
    std::vector<QueryCase> queries;
    GtIndex gts;
    int scenes = 0;
};

RandomInstance random_instance(std::mt19937_64& rng, int max_queries, int max_entries) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    RandomInstance inst;
    inst.scenes = 3 + static_cast<int>(rng() % 4);
    const int ids = 1 + static_cast<int>(rng() % 4);
    const int dim = 4;
    for (int s = 0; s < inst.scenes; ++s) {
        int n = static_cast<int>(rng() % 3);
        for (int g = 0; g < n; ++g) {
            double x = unit(rng) * 50, y = unit(rng) * 50;
            inst.gts.by_scene[s].push_back({static_cast<int>(rng() % ids),
                                            Box{x, y, x + 15, y + 25}});
        }
    }
    int entries = 1 + static_cast<int>(rng() % max_entries);
    for (int e = 0; e < entries; ++e) {
        GalleryEntry ge;
        ge.scene_id = static_cast<int>(rng() % inst.scenes);
        if ((rng() & 1u) && inst.gts.by_scene.count(ge.scene_id) &&
            !inst.gts.by_scene[ge.scene_id].empty()) {
            const auto& g =
                inst.gts.by_scene[ge.scene_id][rng() % inst.gts.by_scene[ge.scene_id].size()];
            double dx = (unit(rng) - 0.5) * 6;
            ge.box = Box{g.second.x1 + dx, g.second.y1, g.second.x2 + dx, g.second.y2};
        } else {
            double x = unit(rng) * 60, y = unit(rng) * 60;
            ge.box = Box{x, y, x + 12, y + 20};
        }
        ge.e_hat = random_unit(rng, dim);
        ge.det_score = unit(rng);
        inst.gallery.push_back(std::move(ge));
    }
    int queries = 1 + static_cast<int>(rng() % max_queries);
    for (int q = 0; q < queries; ++q) {
        QueryCase qc;
        qc.identity = static_cast<int>(rng() % ids);
        qc.probe_scene = static_cast<int>(rng() % inst.scenes);
        qc.e_hat = random_unit(rng, dim);
        for (int s = 0; s < inst.scenes; ++s)
            if (s != qc.probe_scene && (rng() % 4) != 0) qc.candidate_scenes.push_back(s);
        inst.queries.push_back(std::move(qc));
    }
    return inst;
}

TEST(SearchMetrics, MatchExhaustiveOracleOnRandomInstances) {
    auto rng = make_rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        RandomInstance inst = random_instance(rng, 5, 10);

        SearchResult sr = search_map(inst.queries, inst.gallery, inst.gts, 0.5, false);
        std::vector<double> curve = cmc(inst.queries, inst.gallery, inst.gts, 10, 0.5, false);

        double acc = 0;
        int scored = 0, excluded = 0;
        std::vector<double> oracle_curve(10, 0.0);
        for (const auto& q : inst.queries) {
            OracleResult r = oracle_query(q, inst.gallery, inst.gts, 0.5);
            if (r.positives == 0) {
                ++excluded;
                continue;
            }
            acc += r.ap;
            ++scored;
            if (r.first_tp_rank >= 0)
                for (int k = r.first_tp_rank; k < 10; ++k) oracle_curve[k] += 1.0;
        }
        double oracle_map = scored > 0 ? acc / scored : 0.0;
        if (scored > 0)
            for (auto& v : oracle_curve) v /= scored;

        EXPECT_NEAR(sr.map, oracle_map, 1e-12) << "trial " << trial;
        EXPECT_EQ(sr.scored_queries, scored) << "trial " << trial;
        EXPECT_EQ(sr.excluded_queries, excluded) << "trial " << trial;
        for (int k = 0; k < 10; ++k)
            EXPECT_NEAR(curve[k], oracle_curve[k], 1e-12) << "trial " << trial << " rank " << k;
    }
}

TEST(SearchMetrics, TrivialSingleMatch) {
    GtIndex gts;
    gts.by_scene[1] = {{7, Box{10, 10, 25, 35}}};
    std::vector<GalleryEntry> gallery = {{1, Box{10, 10, 25, 35}, {1, 0}, 0.9}};
    QueryCase q;
    q.identity = 7;
    q.probe_scene = 0;
    q.e_hat = {1, 0};
    q.candidate_scenes = {1};
    SearchResult sr = search_map({q}, gallery, gts);
    EXPECT_DOUBLE_EQ(sr.map, 1.0);
    auto curve = cmc({q}, gallery, gts, 5);
    for (double v : curve) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(SearchMetrics, QueryWithNoPositiveSceneExcludedOrZero) {
    GtIndex gts;
    gts.by_scene[1] = {{3, Box{10, 10, 25, 35}}};
    std::vector<GalleryEntry> gallery = {{1, Box{10, 10, 25, 35}, {1, 0}, 0.9}};
    QueryCase q;
    q.identity = 9;  // never appears
    q.probe_scene = 0;
    q.e_hat = {1, 0};
    q.candidate_scenes = {1};
    SearchResult excluded = search_map({q}, gallery, gts, 0.5, false);
    EXPECT_EQ(excluded.scored_queries, 0);
    EXPECT_EQ(excluded.excluded_queries, 1);
    SearchResult zeroed = search_map({q}, gallery, gts, 0.5, true);
    EXPECT_EQ(zeroed.scored_queries, 1);
    EXPECT_DOUBLE_EQ(zeroed.map, 0.0);
}

TEST(SearchMetrics, RankingInvariantToQueryScale) {
    auto rng = make_rng(55);
    RandomInstance inst = random_instance(rng, 4, 10);
    SearchResult base = search_map(inst.queries, inst.gallery, inst.gts);
    for (auto& q : inst.queries)
        for (auto& x : q.e_hat) x *= 7.5;  // monotone similarity transform
    SearchResult scaled = search_map(inst.queries, inst.gallery, inst.gts);
    EXPECT_EQ(base.per_query_ap, scaled.per_query_ap);
}

TEST(SearchMetrics, TrailingLowSimilarityDistractorsChangeNothing) {
    auto rng = make_rng(56);
    RandomInstance inst = random_instance(rng, 3, 8);
    SearchResult base = search_map(inst.queries, inst.gallery, inst.gts);
    std::vector<double> base_cmc = cmc(inst.queries, inst.gallery, inst.gts, 10);
    // entries anti-aligned with every query rank strictly last
    std::vector<double> anti(4, 0.0);
    for (const auto& q : inst.queries)
        for (std::size_t d = 0; d < 4; ++d) anti[d] -= q.e_hat[d];
    double n = 0;
    for (double x : anti) n += x * x;
    if (n == 0) anti = {-1, 0, 0, 0};
    n = std::sqrt(std::max(n, 1.0));
    for (auto& x : anti) x /= n;
    for (int s = 0; s < inst.scenes; ++s)
        inst.gallery.push_back({s, Box{70, 70, 80, 90}, anti, 0.5});
    SearchResult more = search_map(inst.queries, inst.gallery, inst.gts);
    std::vector<double> more_cmc = cmc(inst.queries, inst.gallery, inst.gts, 10);
    for (std::size_t i = 0; i < base.per_query_ap.size(); ++i)
        EXPECT_NEAR(base.per_query_ap[i], more.per_query_ap[i], 1e-12);
    for (int k = 0; k < 10; ++k) EXPECT_NEAR(base_cmc[k], more_cmc[k], 1e-12);
}

TEST(SearchMetrics, TieBreakIsStableGalleryOrder) {
    GtIndex gts;
    gts.by_scene[1] = {{0, Box{10, 10, 25, 35}}};
    gts.by_scene[2] = {{0, Box{10, 10, 25, 35}}};
    std::vector<double> same = {0.6, 0.8};
    std::vector<GalleryEntry> gallery = {{2, Box{40, 40, 52, 60}, same, 0.9},
                                         {1, Box{10, 10, 25, 35}, same, 0.9}};
    QueryCase q;
    q.identity = 0;
    q.probe_scene = 0;
    q.e_hat = same;
    q.candidate_scenes = {1, 2};
    RankedQuery rq = rank_query(q, gallery, gts);
    ASSERT_EQ(rq.tp.size(), 2u);
    EXPECT_FALSE(rq.tp[0]);  // gallery index 0 first on the tie, and it is a miss
    EXPECT_TRUE(rq.tp[1]);
}

// ---------------------------------------------------------------------------
// Gallery sweep
// ---------------------------------------------------------------------------

EvalData synthetic_eval_data(std::mt19937_64& rng, int scenes) {
    RandomInstance inst = random_instance(rng, 4, 10);
    EvalData data;
    data.gallery = inst.gallery;
    data.queries = inst.queries;
    data.gts = inst.gts;
    data.num_scenes = std::max(scenes, inst.scenes);
    for (auto& q : data.queries) {  // candidates = every scene but the probe
        q.candidate_scenes.clear();
        for (int s = 0; s < inst.scenes; ++s)
            if (s != q.probe_scene) q.candidate_scenes.push_back(s);
    }
    return data;
}

TEST(GallerySweep, PerQueryApNonIncreasingAndDeterministic) {
    auto rng = make_rng(91);
    for (int trial = 0; trial < 20; ++trial) {
        EvalData data = synthetic_eval_data(rng, 0);
        ProtocolConfig proto;
        std::vector<int> sizes = {2, 3, data.num_scenes};
        auto rows = gallery_sweep(data, proto, sizes, 5);
        auto rows2 = gallery_sweep(data, proto, sizes, 5);
        ASSERT_EQ(rows.size(), sizes.size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            EXPECT_EQ(rows[r].map, rows2[r].map);
            EXPECT_EQ(rows[r].per_query_ap, rows2[r].per_query_ap);
        }
        for (std::size_t r = 1; r < rows.size(); ++r) {
            ASSERT_EQ(rows[r].per_query_ap.size(), rows[r - 1].per_query_ap.size());
            for (std::size_t qi = 0; qi < rows[r].per_query_ap.size(); ++qi)
                EXPECT_LE(rows[r].per_query_ap[qi], rows[r - 1].per_query_ap[qi] + 1e-12)
                    << "trial " << trial;
        }
    }
}

TEST(GallerySweep, FullSizeEqualsDirectEvaluation) {
    auto rng = make_rng(92);
    EvalData data = synthetic_eval_data(rng, 0);
    ProtocolConfig proto;
    auto rows = gallery_sweep(data, proto, {data.num_scenes}, 9);
    SearchResult direct = search_map(data.queries, data.gallery, data.gts, proto.iou_thr,
                                     proto.score_empty_queries_zero);
    EXPECT_NEAR(rows[0].map, direct.map, 1e-12);
}

TEST(GallerySweep, InputValidation) {
    auto rng = make_rng(93);
    EvalData data = synthetic_eval_data(rng, 0);
    ProtocolConfig proto;
    EXPECT_THROW(gallery_sweep(data, proto, {4, 2}, 1), std::invalid_argument);
    EXPECT_THROW(gallery_sweep(data, proto, {data.num_scenes + 1}, 1), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Whole-model evaluation protocol
// ---------------------------------------------------------------------------

TEST(Evaluation, PureAndWellFormed) {
    DatasetSpec spec;
    spec.identities = 3;
    spec.train_scenes = 6;
    spec.test_scenes = 5;
    spec.scene.width = 64;
    spec.scene.height = 96;
    spec.scene.clutter_shapes = 4;
    spec.seed = 13;
    Dataset ds = make_dataset(spec);
    auto test = ds.split("test");

    NetworkConfig ncfg;
    ncfg.c1 = 8;
    ncfg.c3 = 4;
    ncfg.c5 = 4;
    ncfg.embed_dim = 4;
    ncfg.seed = 7;
    MaeParams params = MaeParams::make(ncfg);
    AttributePartition part = AttributePartition::make(5);
    ProtocolConfig proto;
    proto.gallery_sizes = {2, 5};

    MetricsReport a = evaluate_model(params, part, test, ProposalPolicy{}, proto, 3);
    MetricsReport b = evaluate_model(params, part, test, ProposalPolicy{}, proto, 3);
    EXPECT_EQ(a.map, b.map);
    EXPECT_EQ(a.cmc_curve, b.cmc_curve);
    EXPECT_EQ(a.gallery_entries, b.gallery_entries);

    EXPECT_GE(a.recall, 0.0);
    EXPECT_LE(a.recall, 1.0);
    EXPECT_GE(a.ap, 0.0);
    EXPECT_LE(a.ap, 1.0);
    EXPECT_GE(a.map, 0.0);
    EXPECT_LE(a.map, 1.0);
    ASSERT_EQ(a.cmc_curve.size(), static_cast<std::size_t>(proto.max_rank));
    for (std::size_t k = 1; k < a.cmc_curve.size(); ++k)
        EXPECT_GE(a.cmc_curve[k], a.cmc_curve[k - 1]);  // CMC is non-decreasing
    EXPECT_EQ(a.gallery_scenes, 5);
}

}  // namespace
