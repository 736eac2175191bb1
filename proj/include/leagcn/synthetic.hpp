#pragma once

#include <cstdio>
#include <fstream>
#include <string>

#include "leagcn/error.hpp"

namespace leagcn {

// Rule-generated two-domain corpus for smoke tests: 50 users, 20 items per
// domain. Each user alternates domains starting with A; the next A-item is
// always (previous A + 3) mod 20 and the next B-item (previous B + 7) mod 20,
// so next-item prediction is fully determined by the prefix. Start items and
// lengths vary per user, timestamps are event indices. Every user ends up
// with 12..20 interactions in both domains and every item occurs well above
// the cold-item threshold, so cold-start filtering keeps the corpus intact.
inline std::string synthetic_corpus(std::size_t users = 50, std::size_t items_per_domain = 20) {
    std::string out;
    char buf[64];
    for (std::size_t u = 0; u < users; ++u) {
        const std::size_t length = 12 + u % 9;
        std::size_t a = u % items_per_domain;
        std::size_t b = (3 * u + 5) % items_per_domain;
        for (std::size_t t = 0; t < length; ++t) {
            const bool is_a = t % 2 == 0;
            if (is_a) {
                if (t >= 2) a = (a + 3) % items_per_domain;
                std::snprintf(buf, sizeof(buf), "u%03zu\ta%02zu\tA\t%zu\n", u, a, t);
            } else {
                if (t >= 2) b = (b + 7) % items_per_domain;
                std::snprintf(buf, sizeof(buf), "u%03zu\tb%02zu\tB\t%zu\n", u, b, t);
            }
            out += buf;
        }
    }
    return out;
}

inline void write_synthetic_corpus(const std::string& path, std::size_t users = 50,
                                   std::size_t items_per_domain = 20) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write synthetic corpus: " + path);
    f << synthetic_corpus(users, items_per_domain);
}

}  // namespace leagcn
