// corpus parsing, filtering, folds, archive round-trip
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "traced/dataset.hpp"

using namespace traced;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name, const std::string& content) {
        path = (std::filesystem::temp_directory_path() / name).string();
        std::ofstream(path) << content;
    }
    ~TempFile() { std::remove(path.c_str()); }
};

const char* kHeader = "student_id,problem_id,timestamp,response\n";

}  // namespace

TEST_CASE("parse_records: direct parse") {
    TempFile f("t_recs.csv", std::string(kHeader) + "s1,p1,100,1\ns1,p2,200,0\n");
    auto recs = parse_records(f.path);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].student == "s1");
    CHECK(recs[0].problem == "p1");
    CHECK(recs[0].time == 100);
    CHECK(recs[0].response == 1);
    CHECK(recs[1].response == 0);
}

TEST_CASE("parse_records: header only -> EmptyFile") {
    TempFile f("t_empty.csv", kHeader);
    CHECK_THROWS_AS(parse_records(f.path), EmptyFile);
}

TEST_CASE("parse_records: bad response carries line number") {
    TempFile f("t_bad.csv", std::string(kHeader) + "s1,p1,100,2\n");
    try {
        parse_records(f.path);
        FAIL("expected MalformedRow");
    } catch (const MalformedRow& e) {
        CHECK(e.line == 2);
    }
}

TEST_CASE("parse_records: negative timestamp and short row rejected") {
    TempFile f1("t_neg.csv", std::string(kHeader) + "s1,p1,-5,1\n");
    CHECK_THROWS_AS(parse_records(f1.path), MalformedRow);
    TempFile f2("t_short.csv", std::string(kHeader) + "s1,p1,100\n");
    CHECK_THROWS_AS(parse_records(f2.path), MalformedRow);
}

TEST_CASE("parse_qmatrix: incidence rows, zero default, duplicate idempotence") {
    TempFile f("t_q.csv", "problem_id,concept_id\np1,c0\np1,c2\np2,c1\np1,c0\n");
    IdMap pm, cm;
    QMatrix q = parse_qmatrix(f.path, 3, &pm, &cm);
    REQUIRE(q.problems == 2);
    // concepts densify in first-seen order: c0 -> 0, c2 -> 1, c1 -> 2
    CHECK(q.at(0, 0) == 1);
    CHECK(q.at(0, 1) == 1);
    CHECK(q.at(0, 2) == 0);
    CHECK(q.concepts_of(1) == std::vector<int>{2});
    // duplicate pair changed nothing: same as the 3-distinct-pair matrix
    int ones = 0;
    for (auto v : q.incidence) ones += v;
    CHECK(ones == 3);
}

TEST_CASE("parse_qmatrix: concept beyond K") {
    TempFile f("t_qk.csv", "problem_id,concept_id\np1,c0\np1,c1\n");
    CHECK_THROWS_AS(parse_qmatrix(f.path, 1), UnknownConcept);
}

namespace {

// 5-student fixture with planted violations (hand recount):
//  s0: 30 records, 50% correct             -> keeps
//  s1: 29 records                          -> dropped (too few)
//  s2: 40 records, 3 correct (7.5%)        -> dropped (acceptance)
//  s3: 35 records, all correct             -> keeps
//  s4: 30 records, 30% correct             -> keeps
// problems: pa used by all, pb only by s1/s2 (dies with them)
std::string fixture_records() {
    std::string out = kHeader;
    auto emit = [&](const std::string& s, const std::string& p, int n, int correct) {
        for (int i = 0; i < n; ++i)
            out += s + "," + p + "," + std::to_string(100 + i) + "," +
                   (i < correct ? "1" : "0") + "\n";
    };
    emit("s0", "pa", 30, 15);
    emit("s1", "pb", 29, 20);
    emit("s2", "pb", 40, 3);
    emit("s3", "pa", 35, 35);
    emit("s4", "pa", 30, 9);
    return out;
}

}  // namespace

TEST_CASE("filter_corpus: fixture recount 5 -> 3 and problem death") {
    TempFile recs("t_fix.csv", fixture_records());
    TempFile qm("t_fixq.csv", "problem_id,concept_id\npa,c0\npb,c1\n");
    Corpus c = build_corpus(parse_records(recs.path), qm.path, 2);
    REQUIRE(c.n_students() == 5);
    Corpus f = filter_corpus(c);
    CHECK(f.n_students() == 3);
    std::set<std::string> kept(f.students.raw.begin(), f.students.raw.end());
    CHECK(kept == std::set<std::string>{"s0", "s3", "s4"});
    // pb has no surviving records; only pa remains, re-densified to index 0
    CHECK(f.problems.size() == 1);
    CHECK(f.problems.raw[0] == "pa");
    CHECK(f.qmatrix.problems == 1);
    CHECK(f.qmatrix.at(0, 0) == 1);
}

TEST_CASE("filter_corpus is idempotent") {
    TempFile recs("t_fix2.csv", fixture_records());
    TempFile qm("t_fixq2.csv", "problem_id,concept_id\npa,c0\npb,c1\n");
    Corpus c = build_corpus(parse_records(recs.path), qm.path, 2);
    Corpus once = filter_corpus(c);
    Corpus twice = filter_corpus(once);
    REQUIRE(once.n_students() == twice.n_students());
    CHECK(once.total_records() == twice.total_records());
    CHECK(once.students.raw == twice.students.raw);
}

TEST_CASE("filter_corpus: everything filtered -> EmptyAfterFilter") {
    TempFile recs("t_fix3.csv", std::string(kHeader) + "s1,p1,100,1\n");
    TempFile qm("t_fixq3.csv", "problem_id,concept_id\np1,c0\n");
    Corpus c = build_corpus(parse_records(recs.path), qm.path, 1);
    CHECK_THROWS_AS(filter_corpus(c), EmptyAfterFilter);
}

TEST_CASE("build_corpus sorts per-student records by time, ties keep file order") {
    TempFile recs("t_sort.csv",
                  std::string(kHeader) + "s1,p1,300,1\ns1,p2,100,0\ns1,p3,100,1\n");
    TempFile qm("t_sortq.csv", "problem_id,concept_id\np1,c0\np2,c0\np3,c0\n");
    Corpus c = build_corpus(parse_records(recs.path), qm.path, 1);
    const auto& r = c.sequences[0].records;
    CHECK(r[0].time == 100);
    CHECK(c.problems.raw[r[0].problem] == "p2");  // first in file among ties
    CHECK(c.problems.raw[r[1].problem] == "p3");
    CHECK(r[2].time == 300);
}

namespace {

Corpus tiny_corpus(std::size_t n_students) {
    Corpus c;
    for (std::size_t i = 0; i < n_students; ++i) {
        StudentSequence s;
        s.student = c.students.intern("s" + std::to_string(i));
        s.records.push_back({0, 100, 1});
        c.sequences.push_back(std::move(s));
    }
    c.problems.intern("p0");
    c.qmatrix = QMatrix(1, 1);
    c.qmatrix.set(0, 0);
    c.concepts.intern("c0");
    return c;
}

}  // namespace

TEST_CASE("split_folds: sizes, partition, determinism") {
    Corpus c = tiny_corpus(10);
    FoldSplit a = split_folds(c, 5, 77);
    FoldSplit b = split_folds(c, 5, 77);
    REQUIRE(a.folds.size() == 5);
    std::set<int> all_test;
    for (std::size_t f = 0; f < 5; ++f) {
        CHECK(a.folds[f].second.size() == 2);
        CHECK(a.folds[f].first.size() == 8);
        CHECK(a.folds[f].second == b.folds[f].second);
        for (int id : a.folds[f].second) {
            CHECK(all_test.insert(id).second);  // appears in exactly one test fold
            for (int tr : a.folds[f].first) CHECK(tr != id);
        }
    }
    CHECK(all_test.size() == 10);
}

TEST_CASE("split_folds: too few students") {
    Corpus c = tiny_corpus(3);
    CHECK_THROWS_AS(split_folds(c, 5, 0), TooFewStudents);
}

TEST_CASE("corpus archive round-trip preserves dense sequences") {
    TempFile recs("t_rt.csv", fixture_records());
    TempFile qm("t_rtq.csv", "problem_id,concept_id\npa,c0\npb,c1\n");
    Corpus c = build_corpus(parse_records(recs.path), qm.path, 2);
    std::string path = (std::filesystem::temp_directory_path() / "t_corpus.json").string();
    save_corpus(c, path);
    Corpus back = load_corpus(path);
    std::remove(path.c_str());
    REQUIRE(back.n_students() == c.n_students());
    for (std::size_t i = 0; i < c.n_students(); ++i) {
        REQUIRE(back.sequences[i].records.size() == c.sequences[i].records.size());
        for (std::size_t t = 0; t < c.sequences[i].records.size(); ++t) {
            CHECK(back.sequences[i].records[t].problem == c.sequences[i].records[t].problem);
            CHECK(back.sequences[i].records[t].time == c.sequences[i].records[t].time);
            CHECK(back.sequences[i].records[t].response == c.sequences[i].records[t].response);
        }
    }
    CHECK(back.qmatrix.incidence == c.qmatrix.incidence);
    CHECK(back.students.raw == c.students.raw);
}

TEST_CASE("corpus archive: version check") {
    std::string path = (std::filesystem::temp_directory_path() / "t_badver.json").string();
    std::ofstream(path) << "{\"version\": 99}";
    CHECK_THROWS_AS(load_corpus(path), CorruptFile);
    std::remove(path.c_str());
}
