// traced: knowledge-tracing pipeline CLI.
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "traced/heads.hpp"
#include "traced/plot.hpp"
#include "traced/trainer.hpp"

namespace {

// exit codes (stable, documented in README)
constexpr int kExitParse = 2;
constexpr int kExitEmptyCorpus = 3;
constexpr int kExitNonFinite = 4;
constexpr int kExitUnknownStudent = 5;
constexpr int kExitOracleMismatch = 6;
constexpr int kExitMalformedPlot = 7;

std::size_t count_qmatrix_concepts(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw traced::CorruptFile("cannot open " + path);
    std::string line;
    std::getline(in, line);  // header
    std::set<std::string> concepts;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.back() == '\r') line.pop_back();
        auto f = traced::detail::split_csv_line(line);
        if (f.size() == 2) concepts.insert(f[1]);
    }
    return concepts.size();
}

struct IngestOpts {
    std::string records, qmatrix, out;
    std::size_t k = 0;  // 0 = number of distinct concepts in the q-matrix file
    std::size_t min_records = 30;
    double min_accept = 0.10;
    std::size_t min_problem_records = 30;
    bool fixpoint = false;
};

int cmd_ingest(const IngestOpts& o) {
    traced::Corpus corpus;
    try {
        auto raw = traced::parse_records(o.records);
        std::size_t K = o.k ? o.k : count_qmatrix_concepts(o.qmatrix);
        corpus = traced::build_corpus(raw, o.qmatrix, K);
    } catch (const std::exception& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kExitParse;
    }
    std::size_t before_students = corpus.n_students();
    std::size_t before_records = corpus.total_records();
    traced::Corpus filtered;
    try {
        filtered = traced::filter_corpus(corpus, o.min_records, o.min_accept,
                                         o.min_problem_records, o.fixpoint);
    } catch (const traced::EmptyAfterFilter& e) {
        std::cerr << "empty corpus: " << e.what() << "\n";
        return kExitEmptyCorpus;
    }
    traced::save_corpus(filtered, o.out);
    std::cout << "students: " << before_students << " -> " << filtered.n_students() << "\n";
    std::cout << "records: " << before_records << " -> " << filtered.total_records() << "\n";
    std::cout << "problems: " << corpus.problems.size() << " -> " << filtered.problems.size()
              << "\n";
    return 0;
}

struct TrainOpts {
    std::string corpus, out, loss_out;
    traced::TrainConfig cfg;
    int threads = 1;
};

int cmd_train(const TrainOpts& o) {
    traced::Corpus corpus = traced::load_corpus(o.corpus);
    if (corpus.n_students() == 0) {
        std::cerr << "empty corpus\n";
        return kExitEmptyCorpus;
    }
    traced::ModelDims dims{corpus.problems.size(), corpus.qmatrix.concepts, o.cfg.d_e};
    try {
        traced::TrainState st = traced::train(corpus.sequences, corpus.qmatrix, dims, o.cfg);
        if (o.cfg.predictor_epochs > 0 && o.cfg.iters > 0)
            traced::train_predictor(corpus.sequences, corpus.qmatrix, st.theta, st.phi, st.pred,
                                    o.cfg.predictor_epochs, o.cfg.lr, o.cfg.l2);
        traced::save_checkpoint(st, o.out);
        if (!o.loss_out.empty()) traced::save_loss_history(st, o.loss_out);
        if (!st.loss_history.empty())
            std::cout << "final wake loss: " << st.loss_history.back().first
                      << "  sleep loss: " << st.loss_history.back().second << "\n";
        std::cout << "checkpoint: " << o.out << "\n";
    } catch (const traced::NonFiniteLoss& e) {
        std::cerr << "non-finite loss: " << e.what() << "\n";
        return kExitNonFinite;
    }
    return 0;
}

struct EvalOpts {
    std::string corpus, ckpt, out;
    std::size_t folds = 0;
    traced::TrainConfig cfg;
    int threads = 1;
};

int cmd_evaluate(const EvalOpts& o) {
    traced::Corpus corpus = traced::load_corpus(o.corpus);
    if (corpus.n_students() == 0) {
        std::cerr << "empty corpus\n";
        return kExitEmptyCorpus;
    }
    traced::CrossvalResult res;
    try {
        if (!o.ckpt.empty()) {
            traced::TrainState st = traced::load_checkpoint(o.ckpt);
            std::vector<const traced::StudentSequence*> all;
            for (const auto& s : corpus.sequences) all.push_back(&s);
            std::vector<double> scores;
            std::vector<int> labels;
            traced::collect_predictions(all, corpus.qmatrix, st.theta, st.phi, st.pred, scores,
                                        labels);
            res.folds.push_back(traced::fold_metrics(scores, labels));
            res.mean = res.folds[0];
        } else {
            res = traced::crossval_evaluate(corpus, o.cfg, o.folds);
        }
    } catch (const traced::NonFiniteLoss& e) {
        std::cerr << "non-finite loss: " << e.what() << "\n";
        return kExitNonFinite;
    }
    std::ofstream out(o.out);
    out << "fold,auc,acc,pre,rec,rmse,mae\n";
    auto row = [&](const std::string& name, const traced::FoldMetrics& m) {
        out << name << "," << m.auc << "," << m.acc << "," << m.pre << "," << m.rec << ","
            << m.rmse << "," << m.mae << "\n";
    };
    for (std::size_t f = 0; f < res.folds.size(); ++f) row(std::to_string(f), res.folds[f]);
    row("mean", res.mean);
    std::cout << "mean auc: " << res.mean.auc << "  rmse: " << res.mean.rmse << "\n";
    return 0;
}

struct PredictOpts {
    std::string ckpt, corpus, student, out, pred_out;
};

int cmd_predict(const PredictOpts& o) {
    traced::Corpus corpus = traced::load_corpus(o.corpus);
    traced::TrainState st = traced::load_checkpoint(o.ckpt);
    int sid = corpus.students.lookup(o.student);
    if (sid < 0) {
        std::cerr << "unknown student: " << o.student << "\n";
        return kExitUnknownStudent;
    }
    const auto& records = corpus.sequences[sid].records;
    const auto& q = corpus.qmatrix;
    auto tf = traced::compute_features(records, q, st.theta.delta_hat);
    auto prior = traced::prior_propagate(records, q, st.theta, tf);
    auto q_rows = traced::posterior_forward(records, q, st.theta, st.phi);

    std::size_t K = q.concepts;
    std::ofstream out(o.out);
    out << "student_id,step,timestamp,concept_id,prior,posterior,predicted\n";
    for (std::size_t t = 0; t < records.size(); ++t) {
        // predicted mastery at t = push-forward of the previous posterior
        std::vector<double> predicted =
            t == 0 ? prior[0]
                   : traced::predict_mastery_next(q_rows[t - 1], tf.steps[t], st.theta);
        for (std::size_t k = 0; k < K; ++k)
            out << o.student << "," << t << "," << records[t].time << "," << k << ","
                << prior[t][k] << "," << q_rows[t][k] << "," << predicted[k] << "\n";
    }
    if (!o.pred_out.empty()) {
        auto probs = traced::predictor_sequence_probs(records, q, st.theta, st.phi, st.pred);
        std::ofstream pout(o.pred_out);
        pout << "student_id,step,y_pred,r_actual\n";
        for (std::size_t t = 0; t < records.size(); ++t)
            pout << o.student << "," << t << "," << probs[t] << "," << records[t].response
                 << "\n";
    }
    std::cout << "trajectory: " << o.out << " (" << records.size() << " steps, " << K
              << " concepts)\n";
    return 0;
}

struct SampleOpts {
    std::string ckpt, corpus, out;
    std::size_t students = 10;
    std::size_t steps = 20;
    std::uint64_t seed = 0;
};

int cmd_sample(const SampleOpts& o) {
    traced::Corpus corpus = traced::load_corpus(o.corpus);
    traced::TrainState st = traced::load_checkpoint(o.ckpt);
    std::size_t M = corpus.problems.size();
    traced::Rng rng(o.seed);
    std::ofstream out(o.out);
    out << "student_id,problem_id,timestamp,response\n";
    for (std::size_t i = 0; i < o.students; ++i) {
        traced::Skeleton skel;
        long long t = 0;
        for (std::size_t s = 0; s < o.steps; ++s) {
            t += 3600 * static_cast<long long>(1 + rng.below(24));
            skel.times.push_back(t);
            skel.problems.push_back(static_cast<int>(rng.below(M)));
        }
        auto sample = traced::ancestral_sample(skel, corpus.qmatrix, st.theta, rng);
        for (std::size_t s = 0; s < o.steps; ++s)
            out << "sample" << i << "," << corpus.problems.raw[skel.problems[s]] << ","
                << skel.times[s] << "," << sample.responses[s] << "\n";
    }
    std::cout << "wrote " << o.students * o.steps << " records to " << o.out << "\n";
    return 0;
}

struct OracleOpts {
    std::size_t k = 2, t = 3, seeds = 50;
    double tol = 1e-8;
};

int cmd_oracle_check(const OracleOpts& o) {
    double max_loglik_delta = 0, max_marginal_delta = 0;
    for (std::uint64_t seed = 0; seed < o.seeds; ++seed) {
        traced::Rng rng(seed * 7919 + 1);
        traced::ModelDims dims{3, o.k, 4};
        traced::ModelTheta th = traced::ModelTheta::create(dims, 3600.0, seed);
        traced::perturb_store(th.ps, rng, 0.5);
        traced::QMatrix q(dims.M, o.k);
        for (std::size_t j = 0; j < dims.M; ++j) {
            q.set(j, rng.below(o.k));
            for (std::size_t k = 0; k < o.k; ++k)
                if (rng.bernoulli(0.4)) q.set(j, k);
        }
        std::vector<traced::ExerciseRecord> records;
        long long t = 0;
        for (std::size_t s = 0; s < o.t; ++s) {
            t += 600 * static_cast<long long>(1 + rng.below(10));
            records.push_back({static_cast<int>(rng.below(dims.M)), t,
                               rng.bernoulli(0.5) ? 1 : 0});
        }
        auto exact = traced::exact_forward(records, q, th);
        auto smoothed = traced::exact_forward_backward(records, q, th);
        auto brute = traced::brute_force_enumeration(records, q, th);
        max_loglik_delta = std::max(max_loglik_delta, std::abs(exact.loglik - brute.loglik));
        for (std::size_t s = 0; s < o.t; ++s)
            for (std::size_t k = 0; k < o.k; ++k)
                max_marginal_delta = std::max(
                    max_marginal_delta, std::abs(smoothed[s][k] - brute.smoothed[s][k]));
    }
    std::cout << "seeds: " << o.seeds << "  max |loglik delta|: " << max_loglik_delta
              << "  max |marginal delta|: " << max_marginal_delta << "\n";
    if (max_loglik_delta > o.tol || max_marginal_delta > o.tol) {
        std::cerr << "oracle mismatch exceeds " << o.tol << "\n";
        return kExitOracleMismatch;
    }
    std::cout << "oracle check passed\n";
    return 0;
}

struct PlotOpts {
    std::string kind, in, out, ckpt;
};

int cmd_plot(const PlotOpts& o) {
    try {
        auto rows = traced::parse_trajectory_csv(o.in);
        std::string svg;
        if (o.kind == "mastery") {
            svg = traced::svg_mastery_plot(rows);
        } else {
            traced::TrainState st = traced::load_checkpoint(o.ckpt);
            const traced::Array& Ec = st.theta.ps.array(st.theta.E_c);
            std::size_t K = st.theta.dims.K, d = st.theta.dims.d_e;
            // posterior rows by step -> student-state embedding sum_k q_k E_c[k]
            std::map<long long, std::vector<double>> q_by_step;
            for (const auto& r : rows) {
                auto& qrow = q_by_step[r.step];
                if (qrow.empty()) qrow.assign(K, 0.0);
                if (r.concept_id < 0 || static_cast<std::size_t>(r.concept_id) >= K)
                    throw traced::MalformedRow(0, "concept id out of range for checkpoint");
                qrow[r.concept_id] = r.posterior;
            }
            std::vector<std::vector<double>> states;
            for (const auto& [step, qrow] : q_by_step) {
                std::vector<double> v(d, 0.0);
                for (std::size_t k = 0; k < K; ++k)
                    for (std::size_t e = 0; e < d; ++e) v[e] += qrow[k] * Ec.at(k, e);
                states.push_back(std::move(v));
            }
            std::vector<std::vector<double>> concepts;
            for (std::size_t k = 0; k < K; ++k)
                concepts.push_back(traced::embedding_row(Ec, k));
            svg = traced::svg_trajectory_plot(states, concepts);
        }
        std::ofstream out(o.out);
        out << svg;
    } catch (const std::exception& e) {
        std::cerr << "malformed plot input: " << e.what() << "\n";
        return kExitMalformedPlot;
    }
    std::cout << "wrote " << o.out << "\n";
    return 0;
}

void add_train_flags(CLI::App* app, traced::TrainConfig& cfg) {
    app->add_option("--iters", cfg.iters, "wake-sleep iterations");
    app->add_option("--d-e", cfg.d_e, "embedding dimension");
    app->add_option("--d-h", cfg.d_h, "posterior LSTM width (0 = 2K)");
    app->add_option("--d-p", cfg.d_p, "predictor LSTM width (0 = 80+4K)");
    app->add_option("--delta-hat", cfg.delta_hat, "frequency window, seconds");
    app->add_option("--lr", cfg.lr, "learning rate");
    app->add_option("--l2", cfg.l2, "L2 penalty on embedding weights");
    app->add_option("--batch-size", cfg.batch_size, "students per optimizer step");
    app->add_option("--latent-samples", cfg.latent_samples, "posterior samples per wake step");
    app->add_option("--predictor-epochs", cfg.predictor_epochs, "predictor training epochs");
    app->add_option("--seed", cfg.seed, "rng seed");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"traced: interpretable probabilistic knowledge tracing"};
    app.require_subcommand(1);

    IngestOpts ing;
    auto* c_ing = app.add_subcommand("ingest", "parse, filter, and archive a corpus");
    c_ing->add_option("--records", ing.records, "records CSV")->required();
    c_ing->add_option("--qmatrix", ing.qmatrix, "q-matrix CSV")->required();
    c_ing->add_option("--out", ing.out, "corpus archive path")->required();
    c_ing->add_option("--k", ing.k, "concept count (0 = infer from q-matrix)");
    c_ing->add_option("--min-records", ing.min_records, "min records per student");
    c_ing->add_option("--min-accept", ing.min_accept, "min acceptance rate per student");
    c_ing->add_option("--min-problem-records", ing.min_problem_records,
                      "min records per problem");
    c_ing->add_flag("--fixpoint", ing.fixpoint, "alternate filters until stable");

    TrainOpts tr;
    auto* c_tr = app.add_subcommand("train", "wake-sleep + predictor training");
    c_tr->add_option("--corpus", tr.corpus, "corpus archive")->required();
    c_tr->add_option("--out", tr.out, "checkpoint path")->required();
    c_tr->add_option("--loss-out", tr.loss_out, "loss log CSV path");
    c_tr->add_option("--threads", tr.threads, "worker threads (1 = deterministic)");
    add_train_flags(c_tr, tr.cfg);

    EvalOpts ev;
    auto* c_ev = app.add_subcommand("evaluate", "cross-validation or checkpoint evaluation");
    c_ev->add_option("--corpus", ev.corpus, "corpus archive")->required();
    c_ev->add_option("--ckpt", ev.ckpt, "checkpoint to evaluate");
    c_ev->add_option("--folds", ev.folds, "cross-validation folds");
    c_ev->add_option("--out", ev.out, "metrics CSV path")->required();
    c_ev->add_option("--threads", ev.threads, "worker threads (1 = deterministic)");
    add_train_flags(c_ev, ev.cfg);

    PredictOpts pr;
    auto* c_pr = app.add_subcommand("predict", "per-student mastery trajectory");
    c_pr->add_option("--ckpt", pr.ckpt, "checkpoint")->required();
    c_pr->add_option("--corpus", pr.corpus, "corpus archive")->required();
    c_pr->add_option("--student", pr.student, "raw student id")->required();
    c_pr->add_option("--out", pr.out, "trajectory CSV path")->required();
    c_pr->add_option("--pred-out", pr.pred_out, "per-step response prediction CSV");

    SampleOpts sa;
    auto* c_sa = app.add_subcommand("sample", "ancestral samples to a records CSV");
    c_sa->add_option("--ckpt", sa.ckpt, "checkpoint")->required();
    c_sa->add_option("--corpus", sa.corpus, "corpus archive (for the q-matrix)")->required();
    c_sa->add_option("--students", sa.students, "number of sampled students");
    c_sa->add_option("--steps", sa.steps, "records per student");
    c_sa->add_option("--seed", sa.seed, "rng seed");
    c_sa->add_option("--out", sa.out, "records CSV path")->required();

    OracleOpts orc;
    auto* c_or = app.add_subcommand("oracle-check",
                                    "exact forward vs brute-force enumeration");
    c_or->add_option("--k", orc.k, "concepts");
    c_or->add_option("--t", orc.t, "sequence length");
    c_or->add_option("--seeds", orc.seeds, "instances to check");
    c_or->add_option("--tol", orc.tol, "mismatch tolerance");

    PlotOpts pl;
    auto* c_pl = app.add_subcommand("plot", "render SVG figures");
    c_pl->add_option("kind", pl.kind, "mastery|trajectory")
        ->required()
        ->check(CLI::IsMember({"mastery", "trajectory"}));
    c_pl->add_option("--in", pl.in, "trajectory CSV")->required();
    c_pl->add_option("--out", pl.out, "SVG path")->required();
    c_pl->add_option("--ckpt", pl.ckpt, "checkpoint (trajectory plot)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (c_ing->parsed()) return cmd_ingest(ing);
        if (c_tr->parsed()) return cmd_train(tr);
        if (c_ev->parsed()) {
            if (ev.ckpt.empty() && ev.folds < 2) {
                std::cerr << "need --ckpt or --folds >= 2\n";
                return kExitParse;
            }
            return cmd_evaluate(ev);
        }
        if (c_pr->parsed()) return cmd_predict(pr);
        if (c_sa->parsed()) return cmd_sample(sa);
        if (c_or->parsed()) {
            if (orc.k * orc.t > 22) {
                std::cerr << "k*t must be <= 22\n";
                return kExitParse;
            }
            return cmd_oracle_check(orc);
        }
        if (c_pl->parsed()) {
            if (pl.kind == "trajectory" && pl.ckpt.empty()) {
                std::cerr << "trajectory plot needs --ckpt\n";
                return kExitParse;
            }
            return cmd_plot(pl);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
