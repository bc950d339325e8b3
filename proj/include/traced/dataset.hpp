#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "traced/rng.hpp"

namespace traced {

struct MalformedRow : std::runtime_error {
    int line;
    MalformedRow(int ln, const std::string& what)
        : std::runtime_error("line " + std::to_string(ln) + ": " + what), line(ln) {}
};
struct EmptyFile : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnknownConcept : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyAfterFilter : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TooFewStudents : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct OutOfOrderRecord : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CorruptFile : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One row of the records CSV, raw string ids.
struct RawRecord {
    std::string student;
    std::string problem;
    long long time = 0;
    int response = 0;
};

/// Dense-index exercise record.
struct ExerciseRecord {
    int problem = 0;
    long long time = 0;
    int response = 0;
};

struct StudentSequence {
    int student = 0;
    std::vector<ExerciseRecord> records;  // sorted non-decreasing by time
};

struct QMatrix {
    std::size_t problems = 0;
    std::size_t concepts = 0;
    std::vector<std::uint8_t> incidence;  // [problems][concepts]

    QMatrix() = default;
    QMatrix(std::size_t m, std::size_t k) : problems(m), concepts(k), incidence(m * k, 0) {}

    std::uint8_t at(std::size_t j, std::size_t k) const { return incidence[j * concepts + k]; }
    void set(std::size_t j, std::size_t k) { incidence[j * concepts + k] = 1; }

    std::vector<int> concepts_of(std::size_t j) const {
        std::vector<int> out;
        for (std::size_t k = 0; k < concepts; ++k)
            if (at(j, k)) out.push_back(static_cast<int>(k));
        return out;
    }
};

/// Bidirectional raw-id <-> dense-index map. Dense indices follow first
/// appearance order.
struct IdMap {
    std::vector<std::string> raw;
    std::map<std::string, int> dense;

    int intern(const std::string& id) {
        auto it = dense.find(id);
        if (it != dense.end()) return it->second;
        int idx = static_cast<int>(raw.size());
        raw.push_back(id);
        dense.emplace(id, idx);
        return idx;
    }
    int lookup(const std::string& id) const {
        auto it = dense.find(id);
        return it == dense.end() ? -1 : it->second;
    }
    std::size_t size() const { return raw.size(); }
};

struct Corpus {
    std::vector<StudentSequence> sequences;
    QMatrix qmatrix;
    IdMap students;
    IdMap problems;
    IdMap concepts;

    std::size_t n_students() const { return sequences.size(); }
    std::size_t total_records() const {
        std::size_t n = 0;
        for (const auto& s : sequences) n += s.records.size();
        return n;
    }
};

struct FoldSplit {
    // per fold: (train student ids, test student ids)
    std::vector<std::pair<std::vector<int>, std::vector<int>>> folds;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

inline bool parse_ll(const std::string& s, long long& out) {
    try {
        std::size_t pos = 0;
        out = std::stoll(s, &pos);
        return pos == s.size();
    } catch (...) {
        return false;
    }
}

}  // namespace detail

/// CSV header: student_id,problem_id,timestamp,response
inline std::vector<RawRecord> parse_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CorruptFile("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw EmptyFile("empty records file: " + path);
    std::vector<RawRecord> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 4) throw MalformedRow(lineno, "expected 4 fields");
        RawRecord r;
        r.student = fields[0];
        r.problem = fields[1];
        if (!detail::parse_ll(fields[2], r.time) || r.time < 0)
            throw MalformedRow(lineno, "bad timestamp");
        long long resp;
        if (!detail::parse_ll(fields[3], resp) || (resp != 0 && resp != 1))
            throw MalformedRow(lineno, "response must be 0 or 1");
        r.response = static_cast<int>(resp);
        out.push_back(std::move(r));
    }
    if (out.empty()) throw EmptyFile("no data rows in " + path);
    return out;
}

/// CSV header: problem_id,concept_id. Duplicate pairs are idempotent.
/// K caps the number of distinct concepts.
inline QMatrix parse_qmatrix(const std::string& path, std::size_t K,
                             IdMap* problem_map = nullptr, IdMap* concept_map = nullptr) {
    std::ifstream in(path);
    if (!in) throw CorruptFile("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw EmptyFile("empty qmatrix file: " + path);
    IdMap local_p, local_c;
    IdMap& pm = problem_map ? *problem_map : local_p;
    IdMap& cm = concept_map ? *concept_map : local_c;
    std::vector<std::pair<int, int>> pairs;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line.back() == '\r') line.pop_back();
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 2) throw MalformedRow(lineno, "expected 2 fields");
        int j = pm.intern(fields[0]);
        int k = cm.intern(fields[1]);
        if (static_cast<std::size_t>(k) >= K)
            throw UnknownConcept("concept " + fields[1] + " exceeds K=" + std::to_string(K));
        pairs.emplace_back(j, k);
    }
    QMatrix q(pm.size(), K);
    for (auto [j, k] : pairs) q.set(j, k);
    return q;
}

/// Densify raw records + q-matrix pairs into a Corpus. Per-student records
/// are sorted by time (stable, so timestamp ties keep file order).
inline Corpus build_corpus(const std::vector<RawRecord>& records,
                           const std::string& qmatrix_path, std::size_t K) {
    Corpus c;
    std::map<int, std::vector<ExerciseRecord>> by_student;
    for (const auto& r : records) {
        int s = c.students.intern(r.student);
        int p = c.problems.intern(r.problem);
        by_student[s].push_back({p, r.time, r.response});
    }
    c.qmatrix = parse_qmatrix(qmatrix_path, K, &c.problems, &c.concepts);
    // parse_qmatrix may have interned extra problems; widen to cover records
    if (c.qmatrix.problems < c.problems.size()) {
        QMatrix widened(c.problems.size(), K);
        std::copy(c.qmatrix.incidence.begin(), c.qmatrix.incidence.end(),
                  widened.incidence.begin());
        c.qmatrix = std::move(widened);
    }
    for (std::size_t s = 0; s < c.students.size(); ++s) {
        StudentSequence seq;
        seq.student = static_cast<int>(s);
        seq.records = by_student[static_cast<int>(s)];
        std::stable_sort(seq.records.begin(), seq.records.end(),
                         [](const ExerciseRecord& a, const ExerciseRecord& b) {
                             return a.time < b.time;
                         });
        c.sequences.push_back(std::move(seq));
    }
    return c;
}

/// Student filter (min records, min acceptance rate), then problem filter
/// (min records per problem), then re-densification. With `fixpoint` the
/// two filters alternate until nothing changes.
inline Corpus filter_corpus(const Corpus& corpus, std::size_t min_records = 30,
                            double min_accept = 0.10, std::size_t min_problem_records = 30,
                            bool fixpoint = false) {
    std::vector<StudentSequence> seqs = corpus.sequences;
    std::vector<bool> problem_alive(corpus.problems.size(), true);

    auto student_pass = [&](const StudentSequence& s) {
        if (s.records.size() < min_records) return false;
        std::size_t correct = 0;
        for (const auto& r : s.records) correct += static_cast<std::size_t>(r.response);
        return static_cast<double>(correct) >= min_accept * static_cast<double>(s.records.size());
    };

    bool changed = true;
    while (changed) {
        changed = false;
        // student pass
        std::vector<StudentSequence> kept;
        for (auto& s : seqs) {
            if (student_pass(s)) kept.push_back(std::move(s));
            else changed = true;
        }
        seqs = std::move(kept);
        // problem pass
        std::vector<std::size_t> problem_count(corpus.problems.size(), 0);
        for (const auto& s : seqs)
            for (const auto& r : s.records) ++problem_count[r.problem];
        for (std::size_t j = 0; j < problem_alive.size(); ++j) {
            if (problem_alive[j] && problem_count[j] < min_problem_records) {
                problem_alive[j] = false;
                changed = true;
            }
        }
        // drop records of dead problems
        for (auto& s : seqs) {
            auto end = std::remove_if(s.records.begin(), s.records.end(),
                                      [&](const ExerciseRecord& r) {
                                          return !problem_alive[r.problem];
                                      });
            if (end != s.records.end()) {
                s.records.erase(end, s.records.end());
                changed = true;
            }
        }
        if (!fixpoint) break;  // one student pass then one problem pass
    }

    std::erase_if(seqs, [](const StudentSequence& s) { return s.records.empty(); });
    if (seqs.empty()) throw EmptyAfterFilter("no students survive filtering");

    Corpus out;
    std::vector<int> problem_remap(corpus.problems.size(), -1);
    for (auto& s : seqs) {
        const std::string& raw = corpus.students.raw[s.student];
        StudentSequence ns;
        ns.student = out.students.intern(raw);
        for (const auto& r : s.records) {
            if (problem_remap[r.problem] < 0)
                problem_remap[r.problem] = out.problems.intern(corpus.problems.raw[r.problem]);
            ns.records.push_back({problem_remap[r.problem], r.time, r.response});
        }
        out.sequences.push_back(std::move(ns));
    }
    out.concepts = corpus.concepts;
    out.qmatrix = QMatrix(out.problems.size(), corpus.qmatrix.concepts);
    for (std::size_t j = 0; j < corpus.problems.size(); ++j) {
        if (problem_remap[j] < 0) continue;
        for (std::size_t k = 0; k < corpus.qmatrix.concepts; ++k)
            if (corpus.qmatrix.at(j, k)) out.qmatrix.set(problem_remap[j], k);
    }
    return out;
}

/// Seeded shuffle then partition into n nearly-equal test sets.
inline FoldSplit split_folds(const Corpus& corpus, std::size_t n_folds, std::uint64_t seed) {
    if (n_folds < 2 || corpus.n_students() < n_folds)
        throw TooFewStudents("need at least n_folds students and n_folds >= 2");
    std::vector<int> ids(corpus.n_students());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    Rng rng(seed);
    shuffle(ids, rng);
    FoldSplit split;
    std::size_t n = ids.size();
    std::size_t base = n / n_folds, extra = n % n_folds;
    std::size_t pos = 0;
    for (std::size_t f = 0; f < n_folds; ++f) {
        std::size_t sz = base + (f < extra ? 1 : 0);
        std::vector<int> test(ids.begin() + pos, ids.begin() + pos + sz);
        std::vector<int> train;
        train.insert(train.end(), ids.begin(), ids.begin() + pos);
        train.insert(train.end(), ids.begin() + pos + sz, ids.end());
        std::sort(test.begin(), test.end());
        std::sort(train.begin(), train.end());
        split.folds.emplace_back(std::move(train), std::move(test));
        pos += sz;
    }
    return split;
}

// ---- Corpus archive (JSON, version 1) ----

inline nlohmann::ordered_json corpus_to_json(const Corpus& c) {
    nlohmann::ordered_json j;
    j["version"] = 1;
    auto& students = j["students"] = nlohmann::ordered_json::array();
    for (const auto& s : c.sequences) {
        nlohmann::ordered_json e;
        e["id"] = c.students.raw[s.student];
        auto& recs = e["records"] = nlohmann::ordered_json::array();
        for (const auto& r : s.records)
            recs.push_back({r.problem, r.time, r.response});
        students.push_back(std::move(e));
    }
    auto& q = j["qmatrix"];
    q["problems"] = c.qmatrix.problems;
    q["concepts"] = c.qmatrix.concepts;
    auto& pairs = q["pairs"] = nlohmann::ordered_json::array();
    for (std::size_t p = 0; p < c.qmatrix.problems; ++p)
        for (std::size_t k = 0; k < c.qmatrix.concepts; ++k)
            if (c.qmatrix.at(p, k)) pairs.push_back({p, k});
    j["id_maps"]["students"] = c.students.raw;
    j["id_maps"]["problems"] = c.problems.raw;
    j["id_maps"]["concepts"] = c.concepts.raw;
    return j;
}

inline Corpus corpus_from_json(const nlohmann::json& j) {
    if (!j.contains("version") || j["version"] != 1)
        throw CorruptFile("corpus archive: unsupported version");
    Corpus c;
    for (const auto& id : j["id_maps"]["students"]) c.students.intern(id.get<std::string>());
    for (const auto& id : j["id_maps"]["problems"]) c.problems.intern(id.get<std::string>());
    for (const auto& id : j["id_maps"]["concepts"]) c.concepts.intern(id.get<std::string>());
    c.qmatrix = QMatrix(j["qmatrix"]["problems"].get<std::size_t>(),
                        j["qmatrix"]["concepts"].get<std::size_t>());
    for (const auto& p : j["qmatrix"]["pairs"])
        c.qmatrix.set(p[0].get<std::size_t>(), p[1].get<std::size_t>());
    for (const auto& e : j["students"]) {
        StudentSequence s;
        s.student = c.students.lookup(e["id"].get<std::string>());
        for (const auto& r : e["records"])
            s.records.push_back({r[0].get<int>(), r[1].get<long long>(), r[2].get<int>()});
        c.sequences.push_back(std::move(s));
    }
    return c;
}

inline void save_corpus(const Corpus& c, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw CorruptFile("cannot write " + path);
    out << corpus_to_json(c).dump(2) << "\n";
}

inline Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CorruptFile("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw CorruptFile(std::string("corpus archive parse error: ") + e.what());
    }
    return corpus_from_json(j);
}

}  // namespace traced
