// end-to-end CLI behavior: exit codes, file formats, SVG output
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "traced/plot.hpp"

using namespace traced;

namespace {

namespace fs = std::filesystem;

fs::path workdir() {
    fs::path d = fs::temp_directory_path() / "traced_cli_test";
    fs::create_directories(d);
    return d;
}

int run_cli(const std::string& args) {
    std::string cmd = std::string(TRACED_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

// 4 students x 40 records over 3 problems; one student below the acceptance
// floor so the filter output is predictable
void write_fixture(const fs::path& recs, const fs::path& qm) {
    std::ofstream r(recs);
    r << "student_id,problem_id,timestamp,response\n";
    const char* problems[] = {"pa", "pb", "pc"};
    for (int s = 0; s < 4; ++s)
        for (int i = 0; i < 40; ++i) {
            int correct = s == 3 ? (i < 2) : (i % 2);  // s3: 5% acceptance
            r << "s" << s << "," << problems[i % 3] << "," << (1000 + 600 * i) << ","
              << correct << "\n";
        }
    std::ofstream q(qm);
    q << "problem_id,concept_id\npa,c0\npb,c1\npc,c0\npc,c1\n";
}

}  // namespace

TEST_CASE("cli pipeline: ingest, train, evaluate, predict, sample, plot") {
    fs::path d = workdir();
    write_fixture(d / "recs.csv", d / "qm.csv");

    // ingest drops the low-acceptance student
    CHECK(run_cli("ingest --records " + (d / "recs.csv").string() + " --qmatrix " +
                  (d / "qm.csv").string() + " --out " + (d / "corpus.json").string()) == 0);
    Corpus c = load_corpus((d / "corpus.json").string());
    CHECK(c.n_students() == 3);
    CHECK(c.qmatrix.concepts == 2);

    // missing records file -> exit 2
    CHECK(run_cli("ingest --records " + (d / "nope.csv").string() + " --qmatrix " +
                  (d / "qm.csv").string() + " --out " + (d / "x.json").string()) == 2);

    // impossible filter -> exit 3
    CHECK(run_cli("ingest --records " + (d / "recs.csv").string() + " --qmatrix " +
                  (d / "qm.csv").string() + " --out " + (d / "x.json").string() +
                  " --min-records 1000") == 3);

    // tiny training run
    std::string train_flags = " --iters 2 --d-e 4 --d-h 3 --d-p 6 --predictor-epochs 5"
                              " --lr 0.01 --seed 7";
    CHECK(run_cli("train --corpus " + (d / "corpus.json").string() + " --out " +
                  (d / "ckpt.json").string() + " --loss-out " + (d / "loss.csv").string() +
                  train_flags) == 0);
    std::string loss = slurp(d / "loss.csv");
    CHECK(loss.rfind("iteration,wake_loss,sleep_loss\n", 0) == 0);
    CHECK(std::count(loss.begin(), loss.end(), '\n') == 3);  // header + 2 iterations

    // reproducibility: identical seed -> byte-identical checkpoint
    CHECK(run_cli("train --corpus " + (d / "corpus.json").string() + " --out " +
                  (d / "ckpt2.json").string() + train_flags) == 0);
    CHECK(slurp(d / "ckpt.json") == slurp(d / "ckpt2.json"));

    // evaluate a checkpoint: header + fold row + mean row
    CHECK(run_cli("evaluate --corpus " + (d / "corpus.json").string() + " --ckpt " +
                  (d / "ckpt.json").string() + " --out " + (d / "metrics.csv").string()) == 0);
    std::string metrics = slurp(d / "metrics.csv");
    CHECK(metrics.rfind("fold,auc,acc,pre,rec,rmse,mae\n", 0) == 0);
    CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 3);

    // predict writes one row per (step, concept); unknown student -> exit 5
    CHECK(run_cli("predict --ckpt " + (d / "ckpt.json").string() + " --corpus " +
                  (d / "corpus.json").string() + " --student s0 --out " +
                  (d / "traj.csv").string()) == 0);
    auto rows = parse_trajectory_csv((d / "traj.csv").string());
    CHECK(rows.size() == 40 * 2);
    for (const auto& r : rows) {
        CHECK(r.prior >= 0.0);
        CHECK(r.prior <= 1.0);
        CHECK(r.posterior >= 0.0);
        CHECK(r.posterior <= 1.0);
        CHECK(r.predicted >= 0.0);
        CHECK(r.predicted <= 1.0);
    }
    CHECK(run_cli("predict --ckpt " + (d / "ckpt.json").string() + " --corpus " +
                  (d / "corpus.json").string() + " --student nobody --out " +
                  (d / "t2.csv").string()) == 5);

    // sample output round-trips through the record parser
    CHECK(run_cli("sample --ckpt " + (d / "ckpt.json").string() + " --corpus " +
                  (d / "corpus.json").string() + " --students 3 --steps 4 --seed 1 --out " +
                  (d / "sampled.csv").string()) == 0);
    auto sampled = parse_records((d / "sampled.csv").string());
    CHECK(sampled.size() == 12);
    CHECK(run_cli("sample --ckpt " + (d / "ckpt.json").string() + " --corpus " +
                  (d / "corpus.json").string() + " --students 3 --steps 4 --seed 1 --out " +
                  (d / "sampled2.csv").string()) == 0);
    CHECK(slurp(d / "sampled.csv") == slurp(d / "sampled2.csv"));

    // plots: well-formed SVG with a polyline pair per concept
    CHECK(run_cli("plot mastery --in " + (d / "traj.csv").string() + " --out " +
                  (d / "mastery.svg").string()) == 0);
    std::string svg = slurp(d / "mastery.svg");
    CHECK(svg.rfind("<?xml", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    std::size_t polylines = 0;
    for (std::size_t p = svg.find("<polyline"); p != std::string::npos;
         p = svg.find("<polyline", p + 1))
        ++polylines;
    CHECK(polylines == 2 * 2);  // prior + posterior per concept

    CHECK(run_cli("plot trajectory --in " + (d / "traj.csv").string() + " --ckpt " +
                  (d / "ckpt.json").string() + " --out " + (d / "traj.svg").string()) == 0);
    std::string tsvg = slurp(d / "traj.svg");
    CHECK(tsvg.find("<circle") != std::string::npos);

    // malformed plot input -> exit 7
    std::ofstream(d / "garbage.csv") << "student_id,step\noops\n";
    CHECK(run_cli("plot mastery --in " + (d / "garbage.csv").string() + " --out " +
                  (d / "bad.svg").string()) == 7);

    fs::remove_all(d);
}

TEST_CASE("cli oracle-check: pass and usage error") {
    CHECK(run_cli("oracle-check --k 2 --t 3 --seeds 5") == 0);
    CHECK(run_cli("oracle-check --k 1 --t 4 --seeds 5") == 0);
    CHECK(run_cli("oracle-check --k 20 --t 3 --seeds 1") == 2);
}

TEST_CASE("trajectory csv parser rejects malformed rows") {
    fs::path d = workdir();
    fs::path p = d / "bad_traj.csv";
    std::ofstream(p) << "student_id,step,timestamp,concept_id,prior,posterior,predicted\n"
                     << "s0,0,100,0,0.5,0.5\n";  // 6 fields
    CHECK_THROWS_AS(parse_trajectory_csv(p.string()), MalformedRow);
    std::ofstream(p) << "student_id,step,timestamp,concept_id,prior,posterior,predicted\n"
                     << "s0,0,100,0,x,0.5,0.5\n";
    CHECK_THROWS_AS(parse_trajectory_csv(p.string()), MalformedRow);
    fs::remove_all(d);
}
