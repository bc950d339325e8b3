#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "traced/adam.hpp"
#include "traced/metrics.hpp"
#include "traced/predictor.hpp"

namespace traced {

struct VersionMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::size_t d_e = 20;
    std::size_t d_h = 0;  // 0 -> 2K
    std::size_t d_p = 0;  // 0 -> 80 + 4K
    double delta_hat = 86400.0;
    std::size_t iters = 100;
    double lr = 1e-3;
    double l2 = 1e-4;
    std::uint64_t seed = 0;
    std::size_t batch_size = 32;
    std::size_t K_max = 15;
    std::size_t latent_samples = 1;  // posterior samples per student per wake step
    std::size_t predictor_epochs = 200;
    bool use_sgd = false;

    std::size_t hidden_for(std::size_t K) const { return d_h ? d_h : 2 * K; }
    std::size_t pred_hidden_for(std::size_t K) const { return d_p ? d_p : 80 + 4 * K; }
};

struct TrainState {
    TrainConfig cfg;
    ModelTheta theta;
    PosteriorNet phi;
    PredictorNet pred;
    Adam opt_theta, opt_phi;
    std::size_t iteration = 0;
    std::vector<std::pair<double, double>> loss_history;  // (wake, sleep) per iteration

    static TrainState create(const ModelDims& dims, const TrainConfig& cfg) {
        TrainState s;
        s.cfg = cfg;
        s.theta = ModelTheta::create(dims, cfg.delta_hat, cfg.seed);
        s.phi = PosteriorNet::create(dims.K, dims.d_e, cfg.hidden_for(dims.K), cfg.seed + 1);
        s.pred = PredictorNet::create(dims.K, dims.d_e, cfg.pred_hidden_for(dims.K),
                                      cfg.seed + 2);
        s.opt_theta.init(s.theta.ps);
        s.opt_phi.init(s.phi.ps);
        return s;
    }
};

namespace detail {

inline void optimizer_step(Adam& opt, ParamStore& ps, const std::vector<Array>& grads,
                           const TrainConfig& cfg) {
    if (cfg.use_sgd)
        sgd_step(ps, grads, cfg.lr, cfg.l2);
    else
        opt.step(ps, grads, cfg.lr, cfg.l2);
}

}  // namespace detail

/// One wake update: sample latents from q_phi on real responses, then one
/// optimizer step on theta minimizing -mean log p(u', r). Only theta and
/// its moments change.
inline double wake_step(TrainState& st, const std::vector<const StudentSequence*>& batch,
                        const QMatrix& q, Rng& rng) {
    Tape tape(st.theta.ps);
    TapeCtx cx(tape);
    Expr total = cx.c(0.0);
    std::size_t terms = 0;
    for (const StudentSequence* s : batch) {
        auto q_rows = posterior_forward(s->records, q, st.theta, st.phi);
        TimelineFeatures tf = compute_features(s->records, q, st.theta.delta_hat);
        std::vector<int> responses, problems;
        for (const auto& r : s->records) {
            responses.push_back(r.response);
            problems.push_back(r.problem);
        }
        for (std::size_t i = 0; i < st.cfg.latent_samples; ++i) {
            LatentPath u = sample_latents(q_rows, rng);
            total = total + joint_log_prob_t(cx, st.theta, u, responses, problems, q, tf);
            ++terms;
        }
    }
    Expr loss = -(total / cx.c(static_cast<double>(terms)));
    if (!std::isfinite(loss.value())) throw NonFiniteLoss("wake_step: loss not finite");
    auto grads = tape.backward(loss.id);
    detail::optimizer_step(st.opt_theta, st.theta.ps, grads, st.cfg);
    return loss.value() + st.cfg.l2 * st.theta.ps.l2_of_weights();
}

/// One sleep update: ancestral samples from the current generative model on
/// real skeletons, then one optimizer step on phi minimizing the posterior
/// cross-entropy. Only phi and its moments change.
inline double sleep_step(TrainState& st, const std::vector<Skeleton>& batch, const QMatrix& q,
                         Rng& rng) {
    std::vector<JointSample> samples;
    samples.reserve(batch.size());
    for (const auto& skel : batch) samples.push_back(ancestral_sample(skel, q, st.theta, rng));
    Tape tape(st.phi.ps);
    TapeCtx cx(tape);
    Expr loss = sleep_loss_t(cx, st.phi, st.theta, samples, q);
    if (!std::isfinite(loss.value())) throw NonFiniteLoss("sleep_step: loss not finite");
    auto grads = tape.backward(loss.id);
    detail::optimizer_step(st.opt_phi, st.phi.ps, grads, st.cfg);
    return loss.value() + st.cfg.l2 * st.phi.ps.l2_of_weights();
}

/// Alternating wake/sleep over the whole corpus, `cfg.iters` outer
/// iterations, mini-batches of `cfg.batch_size` students.
inline TrainState train(const std::vector<StudentSequence>& students, const QMatrix& q,
                        const ModelDims& dims, const TrainConfig& cfg) {
    TrainState st = TrainState::create(dims, cfg);
    Rng rng(cfg.seed + 17);
    std::vector<const StudentSequence*> order;
    for (const auto& s : students) order.push_back(&s);
    std::vector<Skeleton> skeletons;
    for (const auto& s : students) skeletons.push_back(Skeleton::of(s.records));

    for (std::size_t it = 0; it < cfg.iters; ++it) {
        double wake_sum = 0;
        std::size_t wake_batches = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            std::size_t e = std::min(order.size(), b + cfg.batch_size);
            std::vector<const StudentSequence*> batch(order.begin() + b, order.begin() + e);
            wake_sum += wake_step(st, batch, q, rng);
            ++wake_batches;
        }
        double sleep_sum = 0;
        std::size_t sleep_batches = 0;
        for (std::size_t b = 0; b < skeletons.size(); b += cfg.batch_size) {
            std::size_t e = std::min(skeletons.size(), b + cfg.batch_size);
            std::vector<Skeleton> batch(skeletons.begin() + b, skeletons.begin() + e);
            sleep_sum += sleep_step(st, batch, q, rng);
            ++sleep_batches;
        }
        st.loss_history.emplace_back(wake_sum / static_cast<double>(wake_batches),
                                     sleep_sum / static_cast<double>(sleep_batches));
        ++st.iteration;
    }
    return st;
}

// ---- checkpoint serialization ----

namespace detail {

inline nlohmann::ordered_json store_to_json(const ParamStore& ps) {
    nlohmann::ordered_json j;
    for (std::size_t i = 0; i < ps.count(); ++i) {
        const Array& a = ps.array(static_cast<int>(i));
        j[ps.name(static_cast<int>(i))] = {{"shape", a.shape}, {"data", a.data}};
    }
    return j;
}

inline void store_from_json(ParamStore& ps, const nlohmann::json& j) {
    for (std::size_t i = 0; i < ps.count(); ++i) {
        const std::string& name = ps.name(static_cast<int>(i));
        if (!j.contains(name)) throw CorruptFile("checkpoint missing param " + name);
        Array& a = ps.array(static_cast<int>(i));
        auto shape = j[name]["shape"].get<std::vector<std::size_t>>();
        if (shape != a.shape) throw CorruptFile("checkpoint shape mismatch for " + name);
        a.data = j[name]["data"].get<std::vector<double>>();
    }
}

}  // namespace detail

constexpr int kCheckpointVersion = 1;

inline nlohmann::ordered_json checkpoint_to_json(const TrainState& st) {
    nlohmann::ordered_json j;
    j["version"] = kCheckpointVersion;
    auto& c = j["config"];
    c["M"] = st.theta.dims.M;
    c["K"] = st.theta.dims.K;
    c["d_e"] = st.theta.dims.d_e;
    c["d_h"] = st.phi.d_h;
    c["d_p"] = st.pred.d_p;
    c["delta_hat"] = st.theta.delta_hat;
    c["iters"] = st.cfg.iters;
    c["lr"] = st.cfg.lr;
    c["l2"] = st.cfg.l2;
    c["seed"] = st.cfg.seed;
    c["batch_size"] = st.cfg.batch_size;
    c["latent_samples"] = st.cfg.latent_samples;
    c["predictor_epochs"] = st.cfg.predictor_epochs;
    c["iteration"] = st.iteration;
    j["params"]["theta"] = detail::store_to_json(st.theta.ps);
    j["params"]["phi"] = detail::store_to_json(st.phi.ps);
    j["params"]["predictor"] = detail::store_to_json(st.pred.ps);
    return j;
}

inline void save_checkpoint(const TrainState& st, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw CorruptFile("cannot write " + path);
    out << checkpoint_to_json(st).dump(2) << "\n";
}

inline TrainState load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CorruptFile("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw CorruptFile(std::string("checkpoint parse error: ") + e.what());
    }
    if (!j.contains("version") || j["version"] != kCheckpointVersion)
        throw VersionMismatch("checkpoint version mismatch");
    const auto& c = j["config"];
    TrainConfig cfg;
    cfg.d_e = c["d_e"].get<std::size_t>();
    cfg.d_h = c["d_h"].get<std::size_t>();
    cfg.d_p = c["d_p"].get<std::size_t>();
    cfg.delta_hat = c["delta_hat"].get<double>();
    cfg.iters = c["iters"].get<std::size_t>();
    cfg.lr = c["lr"].get<double>();
    cfg.l2 = c["l2"].get<double>();
    cfg.seed = c["seed"].get<std::uint64_t>();
    cfg.batch_size = c["batch_size"].get<std::size_t>();
    cfg.latent_samples = c["latent_samples"].get<std::size_t>();
    cfg.predictor_epochs = c["predictor_epochs"].get<std::size_t>();
    ModelDims dims{c["M"].get<std::size_t>(), c["K"].get<std::size_t>(), cfg.d_e};
    TrainState st = TrainState::create(dims, cfg);
    st.iteration = c["iteration"].get<std::size_t>();
    detail::store_from_json(st.theta.ps, j["params"]["theta"]);
    detail::store_from_json(st.phi.ps, j["params"]["phi"]);
    detail::store_from_json(st.pred.ps, j["params"]["predictor"]);
    return st;
}

inline void save_loss_history(const TrainState& st, const std::string& path) {
    std::ofstream out(path);
    out << "iteration,wake_loss,sleep_loss\n";
    for (std::size_t i = 0; i < st.loss_history.size(); ++i)
        out << i << "," << st.loss_history[i].first << "," << st.loss_history[i].second << "\n";
}

// ---- cross-validation harness ----

struct FoldMetrics {
    double auc = 0, acc = 0, pre = 0, rec = 0, rmse = 0, mae = 0;
};

struct CrossvalResult {
    std::vector<FoldMetrics> folds;
    FoldMetrics mean;
};

/// Collect (score, label) for all steps t >= 2 of the given students.
inline void collect_predictions(const std::vector<const StudentSequence*>& students,
                                const QMatrix& q, const ModelTheta& th,
                                const PosteriorNet& phi, const PredictorNet& pred,
                                std::vector<double>& scores, std::vector<int>& labels) {
    for (const StudentSequence* s : students) {
        if (s->records.size() < 2) continue;
        auto probs = predictor_sequence_probs(s->records, q, th, phi, pred);
        for (std::size_t t = 1; t < s->records.size(); ++t) {
            scores.push_back(probs[t]);
            labels.push_back(s->records[t].response);
        }
    }
}

inline FoldMetrics fold_metrics(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
    FoldMetrics m;
    m.auc = auc(scores, labels);
    auto tm = threshold_metrics(scores, labels);
    m.acc = tm.acc;
    m.pre = tm.pre;
    m.rec = tm.rec;
    m.rmse = tm.rmse;
    m.mae = tm.mae;
    return m;
}

/// Full pipeline per fold: wake-sleep then predictor on train students,
/// evaluation on test students.
inline CrossvalResult crossval_evaluate(const Corpus& corpus, const TrainConfig& cfg,
                                        std::size_t n_folds) {
    FoldSplit split = split_folds(corpus, n_folds, cfg.seed);
    ModelDims dims{corpus.problems.size(), corpus.qmatrix.concepts, cfg.d_e};
    CrossvalResult res;
    for (const auto& [train_ids, test_ids] : split.folds) {
        std::vector<StudentSequence> train_students;
        for (int id : train_ids) train_students.push_back(corpus.sequences[id]);
        TrainState st = train(train_students, corpus.qmatrix, dims, cfg);
        train_predictor(train_students, corpus.qmatrix, st.theta, st.phi, st.pred,
                        cfg.predictor_epochs, cfg.lr, cfg.l2);
        std::vector<const StudentSequence*> test_students;
        for (int id : test_ids) test_students.push_back(&corpus.sequences[id]);
        std::vector<double> scores;
        std::vector<int> labels;
        collect_predictions(test_students, corpus.qmatrix, st.theta, st.phi, st.pred, scores,
                            labels);
        res.folds.push_back(fold_metrics(scores, labels));
    }
    auto& m = res.mean;
    for (const auto& f : res.folds) {
        m.auc += f.auc;
        m.acc += f.acc;
        m.pre += f.pre;
        m.rec += f.rec;
        m.rmse += f.rmse;
        m.mae += f.mae;
    }
    double n = static_cast<double>(res.folds.size());
    m.auc /= n;
    m.acc /= n;
    m.pre /= n;
    m.rec /= n;
    m.rmse /= n;
    m.mae /= n;
    return res;
}

}  // namespace traced
