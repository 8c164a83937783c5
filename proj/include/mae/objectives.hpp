#pragma once

#include <functional>
#include <json.hpp>

#include "mae/checkpoint.hpp"
#include "mae/network.hpp"

namespace mae {

// ---------------------------------------------------------------------------
// Online instance matching state: identity lookup table + circular queue
// ---------------------------------------------------------------------------

struct OimState {
    std::vector<std::vector<double>> lut;  // L unit-norm identity columns
    std::vector<std::vector<double>> cq;   // Q unit-norm unlabeled columns
    double tau = 1.0 / 30.0;
    double gamma = 0.5;  // momentum of the table update
    int next_cq_slot = 0;

    int num_ids() const { return static_cast<int>(lut.size()); }
    int queue_size() const { return static_cast<int>(cq.size()); }
    int dim() const { return lut.empty() ? 0 : static_cast<int>(lut[0].size()); }

    static OimState make(int num_ids, int queue, int dim, std::uint64_t seed,
                         double tau = 1.0 / 30.0, double gamma = 0.5) {
        if (tau <= 0.0) throw std::invalid_argument("OimState: tau must be positive");
        if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("OimState: gamma must be in [0,1)");
        OimState s;
        s.tau = tau;
        s.gamma = gamma;
        auto rng = make_rng(derive_seed(seed, 0x01A1));
        std::normal_distribution<double> dist(0.0, 1.0);
        auto unit_col = [&] {
            std::vector<double> v(dim);
            double n = 0.0;
            for (auto& x : v) {
                x = dist(rng);
                n += x * x;
            }
            n = std::sqrt(n);
            for (auto& x : v) x /= n;
            return v;
        };
        for (int i = 0; i < num_ids; ++i) s.lut.push_back(unit_col());
        for (int i = 0; i < queue; ++i) s.cq.push_back(unit_col());
        return s;
    }

    void update_labeled(int id, const std::vector<double>& e_hat) {
        if (id < 0 || id >= num_ids()) throw std::invalid_argument("OimState: id out of range");
        auto& col = lut[id];
        double n = 0.0;
        for (std::size_t i = 0; i < col.size(); ++i) {
            col[i] = gamma * col[i] + (1.0 - gamma) * e_hat[i];
            n += col[i] * col[i];
        }
        n = std::sqrt(n);
        for (auto& x : col) x /= n;
    }

    void push_unlabeled(const std::vector<double>& e_hat) {
        if (cq.empty()) return;
        cq[next_cq_slot] = e_hat;
        next_cq_slot = (next_cq_slot + 1) % queue_size();
    }
};

namespace obj_detail {

inline void require_unit(const std::vector<double>& v, const char* who) {
    double n = 0.0;
    for (double x : v) n += x * x;
    if (std::abs(std::sqrt(n) - 1.0) > 1e-6)
        throw std::invalid_argument(std::string(who) + ": embedding is not unit-norm");
}

}  // namespace obj_detail

// Mean cross-entropy of labeled embeddings against [lut; cq] logits. The
// table is non-differentiable state; gradient flows into the embeddings only.
inline Tensor oim_logits_loss(const std::vector<Tensor>& e_hats, const std::vector<int>& labels,
                              const OimState& state) {
    if (e_hats.size() != labels.size())
        throw std::invalid_argument("oim_loss: label count mismatch");
    std::vector<std::vector<double>> table = state.lut;
    table.insert(table.end(), state.cq.begin(), state.cq.end());
    Tensor acc;
    int labeled = 0;
    for (std::size_t i = 0; i < e_hats.size(); ++i) {
        if (labels[i] < 0) continue;
        if (labels[i] >= state.num_ids())
            throw std::invalid_argument("oim_loss: id out of range");
        obj_detail::require_unit(e_hats[i].values(), "oim_loss");
        Tensor logits = scale(matvec_const(table, e_hats[i]), 1.0 / state.tau);
        Tensor ce = cross_entropy_logits(logits, labels[i]);
        acc = acc.defined() ? add(acc, ce) : ce;
        ++labeled;
    }
    if (labeled == 0) return Tensor::scalar(0.0);
    return scale(acc, 1.0 / labeled);
}

// Loss plus the per-sample table updates, applied in input order.
inline Tensor oim_loss(const std::vector<Tensor>& e_hats, const std::vector<int>& labels,
                       OimState& state) {
    Tensor loss = oim_logits_loss(e_hats, labels, state);
    for (std::size_t i = 0; i < e_hats.size(); ++i) {
        if (labels[i] >= 0)
            state.update_labeled(labels[i], e_hats[i].values());
        else
            state.push_unlabeled(e_hats[i].values());
    }
    return loss;
}

// Mean binary cross-entropy on calibrated detection scores.
inline Tensor detection_loss(const std::vector<Tensor>& det_scores,
                             const std::vector<bool>& fg_flags) {
    if (det_scores.empty()) throw std::invalid_argument("detection_loss: empty batch");
    if (det_scores.size() != fg_flags.size())
        throw std::invalid_argument("detection_loss: flag count mismatch");
    Tensor acc;
    for (std::size_t i = 0; i < det_scores.size(); ++i) {
        Tensor term = bce(det_scores[i], fg_flags[i] ? 1.0 : 0.0);
        acc = acc.defined() ? add(acc, term) : term;
    }
    return scale(acc, 1.0 / static_cast<double>(det_scores.size()));
}

// ---------------------------------------------------------------------------
// Proposal generation (stands in for the region-proposal network)
// ---------------------------------------------------------------------------

struct Proposal {
    enum class Source { Gt, Jitter, Random };
    Box box;
    int identity = -1;  // -1 for background
    Source source = Source::Gt;
    bool foreground() const { return identity >= 0; }
};

struct ProposalPolicy {
    int jitters = 3;
    int backgrounds = 4;
    double jitter_frac = 0.1;
    double fg_iou = 0.5;
    double bg_iou = 0.3;
    double bg_ioa = 0.15;  // max fraction of a background box covered by any person
};

struct ProposalSet {
    std::vector<Proposal> proposals;
    bool background_shortfall = false;
};

inline ProposalSet make_proposals(const SceneSample& scene, const ProposalPolicy& policy,
                                  std::uint64_t seed) {
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    ProposalSet out;
    const double W = scene.width, H = scene.height;

    for (const auto& person : scene.persons) {
        out.proposals.push_back({person.box, person.identity, Proposal::Source::Gt});
        for (int j = 0; j < policy.jitters; ++j) {
            Box jb = person.box;
            for (int attempt = 0; attempt < 20; ++attempt) {
                double cx = (person.box.x1 + person.box.x2) / 2;
                double cy = (person.box.y1 + person.box.y2) / 2;
                double w = person.box.width(), h = person.box.height();
                double f = policy.jitter_frac;
                cx += (unit(rng) * 2 - 1) * f * w;
                cy += (unit(rng) * 2 - 1) * f * h;
                double sw = w * (1.0 + (unit(rng) * 2 - 1) * f);
                double sh = h * (1.0 + (unit(rng) * 2 - 1) * f);
                Box cand{cx - sw / 2, cy - sh / 2, cx + sw / 2, cy + sh / 2};
                cand = cand.clipped(W, H);
                if (cand.valid() && iou(cand, person.box) >= policy.fg_iou) {
                    jb = cand;
                    break;
                }
            }
            out.proposals.push_back({jb, person.identity, Proposal::Source::Jitter});
        }
    }

    for (int b = 0; b < policy.backgrounds; ++b) {
        bool placed = false;
        for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
            double bw = 12 + unit(rng) * std::min(36.0, W / 2);
            double bh = 20 + unit(rng) * std::min(64.0, H / 2);
            double x = unit(rng) * std::max(1.0, W - bw);
            double y = unit(rng) * std::max(1.0, H - bh);
            Box cand{x, y, x + bw, y + bh};
            bool clear = true;
            for (const auto& person : scene.persons) {
                if (iou(cand, person.box) >= policy.bg_iou) clear = false;
                // also reject boxes sitting mostly on a person (tiny IoU but
                // person content), which would poison the background label
                double ix = std::max(0.0, std::min(cand.x2, person.box.x2) -
                                              std::max(cand.x1, person.box.x1));
                double iy = std::max(0.0, std::min(cand.y2, person.box.y2) -
                                              std::max(cand.y1, person.box.y1));
                if (ix * iy >= policy.bg_ioa * cand.area()) clear = false;
            }
            if (clear) {
                out.proposals.push_back({cand, -1, Proposal::Source::Random});
                placed = true;
            }
        }
        if (!placed) out.background_shortfall = true;
    }
    return out;
}

// ---------------------------------------------------------------------------
// SGD with momentum, weight decay, step schedule and epoch-1 warmup
// ---------------------------------------------------------------------------

struct OptimConfig {
    double base_lr = 0.003;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int lr_decay_epochs = 8;      // divide by 10 every 8 epochs
    double lr_decay_factor = 0.1;
    bool warmup = true;           // linear over epoch 1
    int accum_window = 6;         // images per backpropagation
    double lambda_oim = 1.0;
};

// epoch is 1-based; step/steps index accumulation windows within the epoch.
inline double scheduled_lr(const OptimConfig& cfg, int epoch, int step, int steps_per_epoch) {
    double lr = cfg.base_lr *
                std::pow(cfg.lr_decay_factor, (epoch - 1) / cfg.lr_decay_epochs);
    if (cfg.warmup && epoch == 1 && steps_per_epoch > 0)
        lr *= static_cast<double>(step + 1) / steps_per_epoch;
    return lr;
}

struct SgdState {
    std::vector<std::vector<double>> buffers;  // aligned with named_tensors()

    static SgdState make(MaeParams& params) {
        SgdState s;
        for (auto& [name, t] : params.named_tensors()) s.buffers.emplace_back(t.size(), 0.0);
        return s;
    }
};

inline void sgd_step(MaeParams& params, SgdState& state, const OptimConfig& cfg, double lr) {
    auto named = params.named_tensors();
    if (named.size() != state.buffers.size())
        throw std::invalid_argument("sgd_step: state does not match parameters");
    for (std::size_t i = 0; i < named.size(); ++i) {
        Tensor& t = named[i].second;
        auto& buf = state.buffers[i];
        const auto& g = t.grad();
        auto& v = t.values();
        for (std::size_t j = 0; j < v.size(); ++j) {
            double grad = g[j] + cfg.weight_decay * v[j];
            buf[j] = cfg.momentum * buf[j] + grad;
            v[j] -= lr * buf[j];
        }
    }
}

inline double grad_norm(MaeParams& params) {
    double s = 0.0;
    for (auto& [name, t] : params.named_tensors())
        for (double g : t.grad()) s += g * g;
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Training step over one accumulation window
// ---------------------------------------------------------------------------

struct WindowForward {
    Tensor total, det, oim;
    std::vector<std::pair<int, std::vector<double>>> labeled_ehats;  // (id, values)
    int proposal_count = 0;
    bool background_shortfall = false;
};

// Losses of a window of scenes under one table snapshot: detection BCE over
// all proposals plus lambda * OIM cross-entropy over labeled ones.
inline WindowForward window_forward(const std::vector<const SceneSample*>& scenes,
                                    const std::vector<std::uint64_t>& proposal_seeds,
                                    MaeParams& params, const AttributePartition& partition,
                                    const OimState& oim, const ProposalPolicy& policy,
                                    double lambda_oim) {
    if (scenes.size() != proposal_seeds.size())
        throw std::invalid_argument("window_forward: seed count mismatch");
    WindowForward out;
    std::vector<Tensor> det_scores;
    std::vector<bool> fg_flags;
    std::vector<Tensor> e_hats;
    std::vector<int> labels;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        ProposalSet ps = make_proposals(*scenes[i], policy, proposal_seeds[i]);
        out.background_shortfall = out.background_shortfall || ps.background_shortfall;
        std::vector<Box> boxes;
        for (const auto& p : ps.proposals) boxes.push_back(p.box);
        SceneForward fwd = forward_scene(*scenes[i], boxes, params, partition);
        for (std::size_t j = 0; j < ps.proposals.size(); ++j) {
            det_scores.push_back(fwd.records[j].det_score);
            fg_flags.push_back(ps.proposals[j].foreground());
            if (ps.proposals[j].foreground()) {
                e_hats.push_back(fwd.records[j].e_hat);
                labels.push_back(ps.proposals[j].identity);
            }
        }
    }
    out.proposal_count = static_cast<int>(det_scores.size());
    out.det = detection_loss(det_scores, fg_flags);
    out.oim = oim_logits_loss(e_hats, labels, oim);
    out.total = add(out.det, scale(out.oim, lambda_oim));
    for (std::size_t i = 0; i < e_hats.size(); ++i)
        out.labeled_ehats.emplace_back(labels[i], e_hats[i].values());
    return out;
}

struct StepResult {
    double total = 0, det = 0, oim = 0, grad_norm = 0, lr = 0;
    int proposals = 0;
};

// One optimizer step: forward the window, backprop the mean loss, SGD update,
// then fold the window's embeddings into the OIM table. Table updates are
// grouped per identity (mean embedding) so the step is invariant to scene
// order within the window.
inline StepResult training_step(const std::vector<const SceneSample*>& scenes,
                                const std::vector<std::uint64_t>& proposal_seeds,
                                MaeParams& params, const AttributePartition& partition,
                                SgdState& sgd, OimState& oim, const OptimConfig& cfg,
                                const ProposalPolicy& policy, double lr,
                                bool freeze_lut = false) {
    params.zero_grad();
    WindowForward wf =
        window_forward(scenes, proposal_seeds, params, partition, oim, policy, cfg.lambda_oim);
    if (!std::isfinite(wf.total.item()))
        throw std::runtime_error("training_step: non-finite loss");
    backward(wf.total);
    StepResult res;
    res.total = wf.total.item();
    res.det = wf.det.item();
    res.oim = wf.oim.item();
    res.lr = lr;
    res.proposals = wf.proposal_count;
    res.grad_norm = grad_norm(params);
    sgd_step(params, sgd, cfg, lr);
    if (!freeze_lut) {
        std::map<int, std::pair<std::vector<double>, int>> by_id;
        for (const auto& [id, e] : wf.labeled_ehats) {
            auto& [acc, count] = by_id[id];
            if (acc.empty()) acc.assign(e.size(), 0.0);
            for (std::size_t i = 0; i < e.size(); ++i) acc[i] += e[i];
            ++count;
        }
        for (auto& [id, entry] : by_id) {
            auto& [acc, count] = entry;
            double n = 0.0;
            for (auto& x : acc) {
                x /= count;
                n += x * x;
            }
            n = std::sqrt(n);
            if (n > 0)
                for (auto& x : acc) x /= n;
            oim.update_labeled(id, acc);
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Epoch-level trainer with deterministic resume
// ---------------------------------------------------------------------------

struct TrainerConfig {
    OptimConfig optim;
    ProposalPolicy proposals;
    int epochs = 9;
    // epochs trained with live normalization statistics; later epochs run with
    // the accumulated running stats frozen so training matches inference
    // normalization (0 = never freeze)
    int bn_freeze_epoch = 1;  // freeze running stats after warmup; 0 disables
    std::uint64_t seed = 1;
    double oim_tau = 1.0 / 30.0;
    double oim_gamma = 0.5;
    int oim_queue = 64;
};

struct Trainer {
    MaeParams& params;
    AttributePartition partition;
    TrainerConfig cfg;
    SgdState sgd;
    OimState oim;
    int completed_epochs = 0;
    std::function<void(const nlohmann::json&)> log;

    Trainer(MaeParams& p, const AttributePartition& part, const TrainerConfig& c, int num_ids)
        : params(p),
          partition(part),
          cfg(c),
          sgd(SgdState::make(p)),
          oim(OimState::make(num_ids,
                             c.oim_queue,
                             p.config.use_local ? 2 * p.config.embed_dim : p.config.embed_dim,
                             derive_seed(c.seed, 0x01B), c.oim_tau, c.oim_gamma)) {}

    // Scene order and proposal seeds are pure functions of (seed, epoch), so
    // a resumed run replays the remaining epochs bit-exactly.
    void run(const std::vector<const SceneSample*>& train_scenes) {
        const int n = static_cast<int>(train_scenes.size());
        if (n == 0) throw std::invalid_argument("Trainer: empty training split");
        const int window = std::max(1, cfg.optim.accum_window);
        const int steps_per_epoch = (n + window - 1) / window;
        for (int epoch = completed_epochs + 1; epoch <= cfg.epochs; ++epoch) {
            params.set_training(cfg.bn_freeze_epoch <= 0 || epoch <= cfg.bn_freeze_epoch);
            std::vector<int> order(n);
            for (int i = 0; i < n; ++i) order[i] = i;
            auto rng = make_rng(derive_seed(cfg.seed, 0x0E90C4, static_cast<std::uint64_t>(epoch)));
            std::shuffle(order.begin(), order.end(), rng);
            for (int step = 0; step < steps_per_epoch; ++step) {
                std::vector<const SceneSample*> batch;
                std::vector<std::uint64_t> seeds;
                for (int i = step * window; i < std::min(n, (step + 1) * window); ++i) {
                    const SceneSample* s = train_scenes[order[i]];
                    batch.push_back(s);
                    seeds.push_back(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch) << 20,
                                                static_cast<std::uint64_t>(s->scene_id)));
                }
                double lr = scheduled_lr(cfg.optim, epoch, step, steps_per_epoch);
                StepResult r = training_step(batch, seeds, params, partition, sgd, oim,
                                             cfg.optim, cfg.proposals, lr);
                if (log)
                    log({{"epoch", epoch},
                         {"step", step},
                         {"lr", r.lr},
                         {"loss_total", r.total},
                         {"loss_det", r.det},
                         {"loss_oim", r.oim},
                         {"grad_norm", r.grad_norm},
                         {"proposals", r.proposals}});
            }
            completed_epochs = epoch;
        }
    }

    Checkpoint checkpoint() {
        Checkpoint ck = checkpoint_from_params(params);
        auto named = params.named_tensors();
        for (std::size_t i = 0; i < named.size(); ++i)
            ck.add("opt.momentum." + named[i].first,
                   {static_cast<int>(sgd.buffers[i].size())}, sgd.buffers[i]);
        std::vector<double> lut_flat, cq_flat;
        for (const auto& col : oim.lut) lut_flat.insert(lut_flat.end(), col.begin(), col.end());
        for (const auto& col : oim.cq) cq_flat.insert(cq_flat.end(), col.begin(), col.end());
        ck.add("oim.lut", {oim.num_ids(), oim.dim()}, lut_flat);
        ck.add("oim.cq", {oim.queue_size(), oim.dim()}, cq_flat);
        ck.add("oim.next_slot", {1}, {static_cast<double>(oim.next_cq_slot)});
        ck.add("trainer.completed_epochs", {1}, {static_cast<double>(completed_epochs)});
        return ck;
    }

    void restore(const Checkpoint& ck) {
        restore_params(params, ck);
        auto named = params.named_tensors();
        for (std::size_t i = 0; i < named.size(); ++i) {
            const auto* v = ck.find("opt.momentum." + named[i].first);
            if (!v) throw std::runtime_error("checkpoint missing optimizer state");
            sgd.buffers[i] = *v;
        }
        const auto* lut = ck.find("oim.lut");
        const auto* cq = ck.find("oim.cq");
        const auto* slot = ck.find("oim.next_slot");
        const auto* ep = ck.find("trainer.completed_epochs");
        if (!lut || !cq || !slot || !ep)
            throw std::runtime_error("checkpoint missing trainer state");
        int d = oim.dim();
        for (int i = 0; i < oim.num_ids(); ++i)
            oim.lut[i].assign(lut->begin() + i * d, lut->begin() + (i + 1) * d);
        for (int i = 0; i < oim.queue_size(); ++i)
            oim.cq[i].assign(cq->begin() + i * d, cq->begin() + (i + 1) * d);
        oim.next_cq_slot = static_cast<int>((*slot)[0]);
        completed_epochs = static_cast<int>((*ep)[0]);
    }
};

}  // namespace mae
