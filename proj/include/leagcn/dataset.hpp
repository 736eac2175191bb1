#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "leagcn/error.hpp"
#include "leagcn/rng.hpp"

namespace leagcn {

// Raw interaction record. Domain is 'A' or 'B' throughout the pipeline.
struct Interaction {
    std::string user;
    std::string item;
    char domain;
    long long timestamp;
};

struct InteractionLog {
    std::vector<Interaction> records;  // grouped per user, time-sorted within
};

struct Vocab {
    std::vector<std::string> users;
    std::vector<std::string> items_a;
    std::vector<std::string> items_b;
    std::unordered_map<std::string, std::size_t> user_index;
    std::unordered_map<std::string, std::size_t> item_a_index;
    std::unordered_map<std::string, std::size_t> item_b_index;

    std::size_t num_users() const { return users.size(); }
    std::size_t num_items_a() const { return items_a.size(); }
    std::size_t num_items_b() const { return items_b.size(); }
};

struct Event {
    std::size_t item;  // index into the domain's vocab
    char domain;
    bool operator==(const Event&) const = default;
};

// One user's time-ordered stream over both domains. The hybrid position of
// an event is its index in `events`; the per-domain views below preserve
// those positions.
struct HybridSequence {
    std::size_t user = 0;
    std::vector<Event> events;

    std::vector<std::size_t> positions_of(char domain) const {
        std::vector<std::size_t> out;
        for (std::size_t p = 0; p < events.size(); ++p) {
            if (events[p].domain == domain) out.push_back(p);
        }
        return out;
    }

    std::vector<std::size_t> items_of(char domain) const {
        std::vector<std::size_t> out;
        for (const Event& e : events) {
            if (e.domain == domain) out.push_back(e.item);
        }
        return out;
    }

    bool has_domain(char domain) const {
        for (const Event& e : events) {
            if (e.domain == domain) return true;
        }
        return false;
    }
};

// Evaluation case: the held-out last A-item and last B-item of a sequence,
// with the remaining events re-indexed to contiguous hybrid positions.
struct TestCase {
    HybridSequence prefix;
    std::size_t target_a = 0;
    std::size_t target_b = 0;
};

struct DatasetSplit {
    std::vector<HybridSequence> train;
    std::vector<HybridSequence> test_full;  // held-out sequences before target removal
    std::vector<TestCase> test;
    std::size_t dropped_test = 0;  // held-out sequences whose prefix lost a domain
};

struct TrainingTarget {
    std::size_t prefix_len;  // events [0, prefix_len) form the input
    char domain;
    std::size_t item;
};

struct DatasetStats {
    std::size_t users = 0;
    std::size_t items_a = 0;
    std::size_t items_b = 0;
    std::size_t interactions = 0;
    std::size_t train_sequences = 0;
    std::size_t test_sequences = 0;
};

// ----- ingestion -----

inline InteractionLog ingest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open interaction file: " + path);

    struct Raw {
        Interaction rec;
        std::size_t file_order;
    };
    std::vector<Raw> rows;
    std::set<std::tuple<std::string, std::string, long long, char>> seen;

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::size_t start = 0;
        while (true) {
            std::size_t tab = line.find('\t', start);
            if (tab == std::string::npos) {
                cols.push_back(line.substr(start));
                break;
            }
            cols.push_back(line.substr(start, tab - start));
            start = tab + 1;
        }
        if (cols.size() != 4) {
            throw DataError(path + ":" + std::to_string(lineno) + ": expected 4 tab-separated" +
                            " columns, got " + std::to_string(cols.size()));
        }
        if (cols[2] != "A" && cols[2] != "B") {
            throw DataError(path + ":" + std::to_string(lineno) + ": domain must be A or B, got \"" +
                            cols[2] + "\"");
        }
        std::size_t used = 0;
        long long ts = 0;
        try {
            ts = std::stoll(cols[3], &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != cols[3].size()) {
            throw DataError(path + ":" + std::to_string(lineno) + ": bad timestamp \"" + cols[3] +
                            "\"");
        }
        if (!seen.emplace(cols[0], cols[1], ts, cols[2][0]).second) continue;
        rows.push_back({{std::move(cols[0]), std::move(cols[1]), cols[2][0], ts}, rows.size()});
    }

    // Group users by first appearance, then time-sort each user's records
    // with file order breaking timestamp ties.
    std::unordered_map<std::string, std::size_t> first_seen;
    for (const Raw& r : rows) {
        first_seen.emplace(r.rec.user, first_seen.size());
    }
    std::stable_sort(rows.begin(), rows.end(), [&](const Raw& a, const Raw& b) {
        const std::size_t ua = first_seen[a.rec.user], ub = first_seen[b.rec.user];
        if (ua != ub) return ua < ub;
        if (a.rec.timestamp != b.rec.timestamp) return a.rec.timestamp < b.rec.timestamp;
        return a.file_order < b.file_order;
    });

    InteractionLog log;
    log.records.reserve(rows.size());
    for (Raw& r : rows) log.records.push_back(std::move(r.rec));
    return log;
}

// ----- cold-start filtering -----

// Removes items seen fewer than 5 times, then users left with fewer than 10
// interactions or with interactions in only one domain. Each removal can
// re-expose the other rule, so the pass repeats until nothing changes; the
// record count shrinks monotonically, which guarantees termination.
inline InteractionLog filter_cold(const InteractionLog& input, std::size_t min_item_count = 5,
                                  std::size_t min_user_count = 10) {
    std::vector<Interaction> records = input.records;
    const std::size_t before = records.size();

    while (true) {
        const std::size_t at_start = records.size();

        std::unordered_map<std::string, std::size_t> item_count;
        for (const Interaction& r : records) {
            item_count[r.domain + std::string(1, ':') + r.item] += 1;
        }
        std::erase_if(records, [&](const Interaction& r) {
            return item_count[r.domain + std::string(1, ':') + r.item] < min_item_count;
        });

        std::unordered_map<std::string, std::size_t> user_count;
        std::unordered_map<std::string, int> user_domains;  // bit 0 = A, bit 1 = B
        for (const Interaction& r : records) {
            user_count[r.user] += 1;
            user_domains[r.user] |= r.domain == 'A' ? 1 : 2;
        }
        std::erase_if(records, [&](const Interaction& r) {
            return user_count[r.user] < min_user_count || user_domains[r.user] != 3;
        });

        if (records.size() == at_start) break;
    }

    if (records.empty()) {
        throw DataError("cold-start filtering removed everything (started with " +
                        std::to_string(before) + " records)");
    }
    return InteractionLog{std::move(records)};
}

// ----- vocabularies and sequences -----

inline Vocab build_vocab(const InteractionLog& log) {
    Vocab v;
    for (const Interaction& r : log.records) {
        if (v.user_index.emplace(r.user, v.users.size()).second) v.users.push_back(r.user);
        if (r.domain == 'A') {
            if (v.item_a_index.emplace(r.item, v.items_a.size()).second) {
                v.items_a.push_back(r.item);
            }
        } else {
            if (v.item_b_index.emplace(r.item, v.items_b.size()).second) {
                v.items_b.push_back(r.item);
            }
        }
    }
    return v;
}

inline std::vector<HybridSequence> build_sequences(const InteractionLog& log, const Vocab& vocab) {
    std::vector<HybridSequence> out;
    std::unordered_map<std::size_t, std::size_t> row_of_user;
    for (const Interaction& r : log.records) {
        const std::size_t u = vocab.user_index.at(r.user);
        auto [it, fresh] = row_of_user.emplace(u, out.size());
        if (fresh) {
            out.emplace_back();
            out.back().user = u;
        }
        const std::size_t item = r.domain == 'A' ? vocab.item_a_index.at(r.item)
                                                 : vocab.item_b_index.at(r.item);
        out[it->second].events.push_back({item, r.domain});
    }
    return out;
}

// ----- train/test split -----

// Builds the evaluation view of one held-out sequence: targets are the last
// A-item and last B-item, both removed; the survivors keep their order and
// are re-indexed to contiguous hybrid positions.
inline bool make_test_case(const HybridSequence& seq, TestCase& out) {
    std::size_t last_a = seq.events.size(), last_b = seq.events.size();
    for (std::size_t p = 0; p < seq.events.size(); ++p) {
        if (seq.events[p].domain == 'A') last_a = p;
        if (seq.events[p].domain == 'B') last_b = p;
    }
    if (last_a == seq.events.size() || last_b == seq.events.size()) return false;

    out.target_a = seq.events[last_a].item;
    out.target_b = seq.events[last_b].item;
    out.prefix.user = seq.user;
    out.prefix.events.clear();
    for (std::size_t p = 0; p < seq.events.size(); ++p) {
        if (p == last_a || p == last_b) continue;
        out.prefix.events.push_back(seq.events[p]);
    }
    return out.prefix.has_domain('A') && out.prefix.has_domain('B');
}

inline DatasetSplit split_train_test(const std::vector<HybridSequence>& sequences, double ratio,
                                     std::uint64_t seed) {
    if (sequences.size() < 2) {
        throw DataError("need at least 2 sequences to split, got " +
                        std::to_string(sequences.size()));
    }
    std::vector<std::size_t> order(sequences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = Rng::derive(seed, "train-test-split");
    rng.shuffle(order);

    const auto n_train =
        static_cast<std::size_t>(static_cast<double>(sequences.size()) * ratio + 1e-9);
    DatasetSplit split;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const HybridSequence& seq = sequences[order[i]];
        if (i < n_train) {
            split.train.push_back(seq);
            continue;
        }
        TestCase tc;
        if (make_test_case(seq, tc)) {
            split.test_full.push_back(seq);
            split.test.push_back(std::move(tc));
        } else {
            ++split.dropped_test;
        }
    }
    return split;
}

// ----- training targets -----

// "all" mode yields one example per event whose causal prefix already covers
// both domains; "last" mode keeps only the final event of each domain.
inline std::vector<TrainingTarget> make_training_targets(const HybridSequence& seq,
                                                         const std::string& mode) {
    if (mode != "all" && mode != "last") {
        throw ConfigError("loss_mode must be \"all\" or \"last\", got \"" + mode + "\"");
    }
    std::vector<TrainingTarget> out;
    std::size_t seen_a = 0, seen_b = 0;
    std::size_t last_a = seq.events.size(), last_b = seq.events.size();
    for (std::size_t p = 0; p < seq.events.size(); ++p) {
        if (seq.events[p].domain == 'A') last_a = p;
        else last_b = p;
    }
    for (std::size_t p = 0; p < seq.events.size(); ++p) {
        const Event& e = seq.events[p];
        const bool prefix_covers_both = seen_a > 0 && seen_b > 0;
        const bool wanted = mode == "all" ? true : (p == last_a || p == last_b);
        if (prefix_covers_both && wanted) {
            out.push_back({p, e.domain, e.item});
        }
        (e.domain == 'A' ? seen_a : seen_b) += 1;
    }
    return out;
}

// ----- processed-dataset cache -----

namespace detail {

inline void write_vocab_file(const std::string& path, const std::vector<std::string>& entries) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write vocab file: " + path);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        f << i << '\t' << entries[i] << '\n';
    }
}

inline std::vector<std::string> read_vocab_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open vocab file: " + path);
    std::vector<std::string> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(path + ":" + std::to_string(lineno) + ": expected index<TAB>string");
        }
        if (line.substr(0, tab) != std::to_string(out.size())) {
            throw DataError(path + ":" + std::to_string(lineno) + ": indices must be contiguous");
        }
        out.push_back(line.substr(tab + 1));
    }
    return out;
}

inline void write_sequence_file(const std::string& path,
                                const std::vector<HybridSequence>& sequences) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write sequence file: " + path);
    for (const HybridSequence& s : sequences) {
        f << s.user << '\t';
        for (std::size_t p = 0; p < s.events.size(); ++p) {
            if (p) f << ',';
            f << s.events[p].item << ':' << s.events[p].domain;
        }
        f << '\n';
    }
}

inline std::vector<HybridSequence> read_sequence_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open sequence file: " + path);
    std::vector<HybridSequence> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(path + ":" + std::to_string(lineno) + ": expected user<TAB>events");
        }
        HybridSequence seq;
        try {
            seq.user = std::stoull(line.substr(0, tab));
        } catch (const std::exception&) {
            throw DataError(path + ":" + std::to_string(lineno) + ": bad user index");
        }
        std::size_t start = tab + 1;
        while (start < line.size()) {
            std::size_t comma = line.find(',', start);
            if (comma == std::string::npos) comma = line.size();
            const std::string tok = line.substr(start, comma - start);
            const std::size_t colon = tok.find(':');
            if (colon == std::string::npos || colon + 2 != tok.size() ||
                (tok.back() != 'A' && tok.back() != 'B')) {
                throw DataError(path + ":" + std::to_string(lineno) + ": bad event \"" + tok +
                                "\"");
            }
            Event e;
            try {
                e.item = std::stoull(tok.substr(0, colon));
            } catch (const std::exception&) {
                throw DataError(path + ":" + std::to_string(lineno) + ": bad item index");
            }
            e.domain = tok.back();
            seq.events.push_back(e);
            start = comma + 1;
        }
        if (seq.events.empty()) {
            throw DataError(path + ":" + std::to_string(lineno) + ": empty sequence");
        }
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace detail

// Cache layout inside a directory: users.tsv / items_a.tsv / items_b.tsv
// (index<TAB>string per line) plus train.tsv / test.tsv (user_index<TAB>
// item:domain,... per line). Test sequences are stored whole; the target
// extraction is deterministic, so loading re-derives the TestCases.
inline void save_cache(const std::string& dir, const Vocab& vocab, const DatasetSplit& split) {
    detail::write_vocab_file(dir + "/users.tsv", vocab.users);
    detail::write_vocab_file(dir + "/items_a.tsv", vocab.items_a);
    detail::write_vocab_file(dir + "/items_b.tsv", vocab.items_b);
    detail::write_sequence_file(dir + "/train.tsv", split.train);
    detail::write_sequence_file(dir + "/test.tsv", split.test_full);
}

inline std::pair<Vocab, DatasetSplit> load_cache(const std::string& dir) {
    Vocab vocab;
    vocab.users = detail::read_vocab_file(dir + "/users.tsv");
    vocab.items_a = detail::read_vocab_file(dir + "/items_a.tsv");
    vocab.items_b = detail::read_vocab_file(dir + "/items_b.tsv");
    for (std::size_t i = 0; i < vocab.users.size(); ++i) vocab.user_index[vocab.users[i]] = i;
    for (std::size_t i = 0; i < vocab.items_a.size(); ++i) {
        vocab.item_a_index[vocab.items_a[i]] = i;
    }
    for (std::size_t i = 0; i < vocab.items_b.size(); ++i) {
        vocab.item_b_index[vocab.items_b[i]] = i;
    }

    DatasetSplit split;
    split.train = detail::read_sequence_file(dir + "/train.tsv");
    split.test_full = detail::read_sequence_file(dir + "/test.tsv");
    for (const HybridSequence& seq : split.test_full) {
        TestCase tc;
        if (!make_test_case(seq, tc)) {
            throw DataError("cached test sequence for user " + std::to_string(seq.user) +
                            " cannot yield both targets");
        }
        split.test.push_back(std::move(tc));
    }

    auto check = [&](const std::vector<HybridSequence>& seqs) {
        for (const HybridSequence& s : seqs) {
            if (s.user >= vocab.num_users()) {
                throw DataError("cached sequence user index out of range");
            }
            for (const Event& e : s.events) {
                const std::size_t limit =
                    e.domain == 'A' ? vocab.num_items_a() : vocab.num_items_b();
                if (e.item >= limit) throw DataError("cached item index out of range");
            }
        }
    };
    check(split.train);
    check(split.test_full);
    return {std::move(vocab), std::move(split)};
}

inline DatasetStats dataset_stats(const Vocab& vocab, const InteractionLog& log,
                                  const DatasetSplit& split) {
    DatasetStats s;
    s.users = vocab.num_users();
    s.items_a = vocab.num_items_a();
    s.items_b = vocab.num_items_b();
    s.interactions = log.records.size();
    s.train_sequences = split.train.size();
    s.test_sequences = split.test.size();
    return s;
}

inline void write_stats(const std::string& path, const DatasetStats& s) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write stats file: " + path);
    f << "users\t" << s.users << '\n'
      << "items_a\t" << s.items_a << '\n'
      << "items_b\t" << s.items_b << '\n'
      << "interactions\t" << s.interactions << '\n'
      << "train_sequences\t" << s.train_sequences << '\n'
      << "test_sequences\t" << s.test_sequences << '\n';
}

}  // namespace leagcn
