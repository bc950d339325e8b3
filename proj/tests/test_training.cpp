// posterior net, wake-sleep steps, predictor, checkpoints
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "traced/grad_check.hpp"
#include "traced/trainer.hpp"

using namespace traced;

namespace {

struct Fixture {
    ModelTheta th;
    QMatrix q;
    std::vector<StudentSequence> students;

    static Fixture make(std::uint64_t seed, std::size_t K, std::size_t T, std::size_t n_students,
                        std::size_t M = 3, std::size_t d_e = 4) {
        Rng rng(seed * 31 + 7);
        Fixture f{ModelTheta::create({M, K, d_e}, 3600.0, seed), QMatrix(M, K), {}};
        perturb_store(f.th.ps, rng, 0.5);
        for (std::size_t j = 0; j < M; ++j) {
            f.q.set(j, rng.below(K));
            for (std::size_t k = 0; k < K; ++k)
                if (rng.bernoulli(0.4)) f.q.set(j, k);
        }
        for (std::size_t i = 0; i < n_students; ++i) {
            StudentSequence s;
            s.student = static_cast<int>(i);
            long long t = 0;
            Skeleton skel;
            for (std::size_t step = 0; step < T; ++step) {
                t += 600 * static_cast<long long>(1 + rng.below(10));
                skel.times.push_back(t);
                skel.problems.push_back(static_cast<int>(rng.below(M)));
            }
            JointSample samp = ancestral_sample(skel, f.q, f.th, rng);
            s.records = skel.with_responses(samp.responses);
            f.students.push_back(std::move(s));
        }
        return f;
    }
};

}  // namespace

TEST_CASE("posterior_forward: zero output layer gives q = sigma(b_q)") {
    Fixture f = Fixture::make(1, 2, 4, 1);
    PosteriorNet net = PosteriorNet::create(2, 4, 3, 5);
    for (auto& v : net.ps.array(net.out.weight).data) v = 0.0;
    net.ps.array(net.out.bias).at(0) = 0.7;
    net.ps.array(net.out.bias).at(1) = -0.3;
    auto q_rows = posterior_forward(f.students[0].records, f.q, f.th, net);
    for (const auto& row : q_rows) {
        CHECK(row[0] == doctest::Approx(sigmoid(0.7)).epsilon(1e-12));
        CHECK(row[1] == doctest::Approx(sigmoid(-0.3)).epsilon(1e-12));
    }
}

TEST_CASE("posterior_forward is causal") {
    Fixture f = Fixture::make(2, 2, 5, 1);
    PosteriorNet net = PosteriorNet::create(2, 4, 4, 6);
    Rng rng(6);
    perturb_store(net.ps, rng, 0.3);
    auto full = posterior_forward(f.students[0].records, f.q, f.th, net);
    std::vector<ExerciseRecord> prefix(f.students[0].records.begin(),
                                       f.students[0].records.begin() + 3);
    auto part = posterior_forward(prefix, f.q, f.th, net);
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t k = 0; k < 2; ++k)
            CHECK(part[t][k] == doctest::Approx(full[t][k]).epsilon(1e-12));
}

TEST_CASE("posterior input layout switches on the response") {
    std::vector<double> x = {1.0, 2.0};
    std::vector<double> prior = {0.5};
    auto in1 = build_posterior_input(x, 1, prior);
    auto in0 = build_posterior_input(x, 0, prior);
    CHECK(in1 == std::vector<double>{1.0, 2.0, 0.0, 0.0, 0.5});
    CHECK(in0 == std::vector<double>{0.0, 0.0, 1.0, 2.0, 0.5});
}

TEST_CASE("sample_latents deterministic and Bernoulli-consistent at extremes") {
    std::vector<std::vector<double>> q_rows = {{1.0, 0.0}, {0.0, 1.0}};
    LatentPath p = sample_latents(q_rows, std::uint64_t{3});
    CHECK(p.u[0] == std::vector<int>{1, 0});
    CHECK(p.u[1] == std::vector<int>{0, 1});
}

TEST_CASE("sleep loss: nonnegative, deterministic, gradient-checked") {
    Fixture f = Fixture::make(3, 2, 3, 2);
    PosteriorNet net = PosteriorNet::create(2, 4, 3, 9);
    Rng rng(9);
    perturb_store(net.ps, rng, 0.3);
    std::vector<JointSample> samples;
    Rng srng(42);
    for (const auto& s : f.students)
        samples.push_back(ancestral_sample(Skeleton::of(s.records), f.q, f.th, srng));
    double l1 = sleep_loss(net, f.th, samples, f.q);
    double l2 = sleep_loss(net, f.th, samples, f.q);
    CHECK(l1 == l2);
    CHECK(l1 >= 0.0);
    auto build = [&](Tape& tape) {
        TapeCtx cx(tape);
        return sleep_loss_t(cx, net, f.th, samples, f.q);
    };
    CHECK(gradient_check(net.ps, build, 1e-5) < 1e-5);
}

TEST_CASE("wake_step only moves theta; sleep_step only moves phi") {
    Fixture f = Fixture::make(4, 2, 3, 3);
    TrainConfig cfg;
    cfg.d_e = 4;
    cfg.d_h = 3;
    cfg.d_p = 6;
    cfg.delta_hat = 3600.0;
    cfg.lr = 1e-2;
    TrainState st = TrainState::create({3, 2, 4}, cfg);
    Rng rng(11);
    auto theta_h = st.theta.ps.hash();
    auto phi_h = st.phi.ps.hash();
    auto pred_h = st.pred.ps.hash();
    std::vector<const StudentSequence*> batch;
    for (const auto& s : f.students) batch.push_back(&s);
    double wl = wake_step(st, batch, f.q, rng);
    CHECK(std::isfinite(wl));
    CHECK(st.theta.ps.hash() != theta_h);
    CHECK(st.phi.ps.hash() == phi_h);
    CHECK(st.pred.ps.hash() == pred_h);

    theta_h = st.theta.ps.hash();
    std::vector<Skeleton> skels;
    for (const auto& s : f.students) skels.push_back(Skeleton::of(s.records));
    double sl = sleep_step(st, skels, f.q, rng);
    CHECK(std::isfinite(sl));
    CHECK(sl >= 0.0);
    CHECK(st.theta.ps.hash() == theta_h);
    CHECK(st.phi.ps.hash() != phi_h);
}

TEST_CASE("wake loss gradient check (theta only, sampled path fixed)") {
    Fixture f = Fixture::make(5, 2, 3, 1);
    PosteriorNet net = PosteriorNet::create(2, 4, 3, 7);
    Rng rng(7);
    perturb_store(net.ps, rng, 0.3);
    const auto& recs = f.students[0].records;
    auto q_rows = posterior_forward(recs, f.q, f.th, net);
    LatentPath u = sample_latents(q_rows, std::uint64_t{13});
    std::vector<int> responses, problems;
    for (const auto& r : recs) {
        responses.push_back(r.response);
        problems.push_back(r.problem);
    }
    TimelineFeatures tf = compute_features(recs, f.q, f.th.delta_hat);
    auto build = [&](Tape& tape) {
        TapeCtx cx(tape);
        return -joint_log_prob_t(cx, f.th, u, responses, problems, f.q, tf);
    };
    CHECK(gradient_check(f.th.ps, build, 1e-5) < 1e-5);
}

TEST_CASE("train: iters=0 leaves the Glorot init untouched") {
    Fixture f = Fixture::make(6, 2, 4, 3);
    TrainConfig cfg;
    cfg.d_e = 4;
    cfg.iters = 0;
    cfg.delta_hat = 3600.0;
    cfg.seed = 99;
    TrainState trained = train(f.students, f.q, {3, 2, 4}, cfg);
    TrainState fresh = TrainState::create({3, 2, 4}, cfg);
    CHECK(trained.theta.ps.hash() == fresh.theta.ps.hash());
    CHECK(trained.phi.ps.hash() == fresh.phi.ps.hash());
    CHECK(trained.loss_history.empty());
}

TEST_CASE("train: same seed twice gives identical parameters and losses") {
    Fixture f = Fixture::make(7, 2, 4, 4);
    TrainConfig cfg;
    cfg.d_e = 4;
    cfg.d_h = 3;
    cfg.d_p = 6;
    cfg.iters = 3;
    cfg.delta_hat = 3600.0;
    cfg.seed = 5;
    cfg.batch_size = 2;
    TrainState a = train(f.students, f.q, {3, 2, 4}, cfg);
    TrainState b = train(f.students, f.q, {3, 2, 4}, cfg);
    CHECK(a.theta.ps.hash() == b.theta.ps.hash());
    CHECK(a.phi.ps.hash() == b.phi.ps.hash());
    REQUIRE(a.loss_history.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a.loss_history[i].first == b.loss_history[i].first);
        CHECK(a.loss_history[i].second == b.loss_history[i].second);
    }
}

TEST_CASE("checkpoint round-trip is byte-identical") {
    Fixture f = Fixture::make(8, 2, 4, 3);
    TrainConfig cfg;
    cfg.d_e = 4;
    cfg.d_h = 3;
    cfg.d_p = 6;
    cfg.iters = 2;
    cfg.delta_hat = 3600.0;
    TrainState st = train(f.students, f.q, {3, 2, 4}, cfg);
    auto dir = std::filesystem::temp_directory_path();
    std::string p1 = (dir / "ckpt_a.json").string();
    std::string p2 = (dir / "ckpt_b.json").string();
    save_checkpoint(st, p1);
    TrainState back = load_checkpoint(p1);
    CHECK(back.theta.ps.hash() == st.theta.ps.hash());
    CHECK(back.phi.ps.hash() == st.phi.ps.hash());
    CHECK(back.pred.ps.hash() == st.pred.ps.hash());
    save_checkpoint(back, p2);
    std::ifstream a(p1), b(p2);
    std::string sa((std::istreambuf_iterator<char>(a)), {});
    std::string sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("checkpoint version and corruption checks") {
    auto dir = std::filesystem::temp_directory_path();
    std::string p = (dir / "ckpt_bad.json").string();
    std::ofstream(p) << "{\"version\": 2}";
    CHECK_THROWS_AS(load_checkpoint(p), VersionMismatch);
    std::ofstream(p) << "not json";
    CHECK_THROWS_AS(load_checkpoint(p), CorruptFile);
    std::remove(p.c_str());
}

TEST_CASE("predictor: teacher-forced probs in (0,1), causal prediction") {
    Fixture f = Fixture::make(9, 2, 5, 1);
    PosteriorNet phi = PosteriorNet::create(2, 4, 3, 3);
    PredictorNet pred = PredictorNet::create(2, 4, 6, 4);
    Rng rng(12);
    perturb_store(phi.ps, rng, 0.3);
    perturb_store(pred.ps, rng, 0.3);
    const auto& recs = f.students[0].records;
    auto probs = predictor_sequence_probs(recs, f.q, f.th, phi, pred);
    REQUIRE(probs.size() == recs.size());
    for (double p : probs) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
    // predict_response on the prefix reproduces the teacher-forced value:
    // the input at step t uses only records before t plus (problem, time) of t
    std::vector<ExerciseRecord> prefix(recs.begin(), recs.end() - 1);
    double y = predict_response(prefix, recs.back().problem, recs.back().time, f.q, f.th, phi,
                                pred);
    CHECK(y == doctest::Approx(probs.back()).epsilon(1e-12));
}

TEST_CASE("predictor loss gradient check") {
    Fixture f = Fixture::make(10, 2, 3, 1);
    PosteriorNet phi = PosteriorNet::create(2, 4, 3, 8);
    PredictorNet pred = PredictorNet::create(2, 4, 5, 9);
    Rng rng(21);
    perturb_store(phi.ps, rng, 0.3);
    perturb_store(pred.ps, rng, 0.3);
    const auto& recs = f.students[0].records;
    auto q_rows = posterior_forward(recs, f.q, f.th, phi);
    auto inputs = predictor_inputs(recs, f.q, f.th, q_rows);
    auto build = [&](Tape& tape) {
        TapeCtx cx(tape);
        auto z = predictor_logits_t(cx, pred, inputs);
        Expr loss = cx.c(0.0);
        for (std::size_t s = 1; s < recs.size(); ++s)
            loss = loss - (recs[s].response ? log_sigmoid(z[s]) : log_sigmoid(-z[s]));
        return loss;
    };
    CHECK(gradient_check(pred.ps, build, 1e-5) < 1e-5);
}

TEST_CASE("train_predictor reduces its loss and freezes theta/phi") {
    Fixture f = Fixture::make(11, 2, 8, 6);
    PosteriorNet phi = PosteriorNet::create(2, 4, 3, 2);
    PredictorNet pred = PredictorNet::create(2, 4, 6, 3);
    Rng rng(31);
    perturb_store(phi.ps, rng, 0.2);
    auto th_h = f.th.ps.hash();
    auto phi_h = phi.ps.hash();
    auto res = train_predictor(f.students, f.q, f.th, phi, pred, 40, 0.05, 0.0);
    REQUIRE(res.loss_history.size() == 40);
    CHECK(res.loss_history.back() < res.loss_history.front());
    CHECK(f.th.ps.hash() == th_h);
    CHECK(phi.ps.hash() == phi_h);
}

TEST_CASE("sleep phase on uninformative theta drives q toward the prior") {
    // generative emissions carry no information, so the optimal posterior is
    // the prior trajectory
    Fixture f = Fixture::make(12, 2, 4, 6);
    for (int arr : {f.th.mu, f.th.w_e, f.th.w_c, f.th.E_e, f.th.E_c})
        for (auto& v : f.th.ps.array(arr).data) v = 0.0;
    for (std::size_t j = 0; j < f.th.dims.M; ++j) {
        f.th.ps.array(f.th.theta_s).at(j) = 0.0;
        f.th.ps.array(f.th.theta_g).at(j) = 0.0;
    }
    TrainConfig cfg;
    cfg.d_e = 4;
    cfg.d_h = 4;
    cfg.delta_hat = 3600.0;
    cfg.lr = 0.02;
    cfg.l2 = 0.0;
    TrainState st = TrainState::create({3, 2, 4}, cfg);
    st.theta = f.th;
    st.opt_theta.init(st.theta.ps);
    std::vector<Skeleton> skels;
    for (const auto& s : f.students) skels.push_back(Skeleton::of(s.records));
    Rng rng(77);
    for (int it = 0; it < 300; ++it) sleep_step(st, skels, f.q, rng);
    double gap = 0;
    std::size_t n = 0;
    for (const auto& s : f.students) {
        auto prior = prior_propagate(s.records, f.q, st.theta);
        auto q_rows = posterior_forward(s.records, f.q, st.theta, st.phi);
        for (std::size_t t = 0; t < s.records.size(); ++t)
            for (std::size_t k = 0; k < 2; ++k) {
                gap += std::abs(q_rows[t][k] - prior[t][k]);
                ++n;
            }
    }
    CHECK(gap / static_cast<double>(n) < 0.05);
}
