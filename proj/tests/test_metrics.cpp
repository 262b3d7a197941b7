// Copyright (c) 2026, the deskt5 authors
// SPDX-License-Identifier: Apache-2.0

#include "deskt5/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "deskt5/error.hpp"
#include "deskt5/rng.hpp"

namespace deskt5 {
namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::path(::testing::TempDir()) / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

TEST(MetricsCsvTest, WritesExactHeader) {
    const std::string path = temp_path("header.csv");
    MetricsCsv csv(path);
    std::ifstream in(path);
    std::string line;
    ASSERT_TRUE(std::getline(in, line));
    EXPECT_EQ(line, "step,split,loss,lr,grad_norm,tokens_per_sec,elapsed_s");
}

TEST(MetricsCsvTest, RowsRoundTripExactly) {
    const std::string path = temp_path("roundtrip.csv");
    std::vector<MetricsRow> rows = {
        {1, "train", 1.0 / 3.0, 6.25e-5, 12.75, 1234.5, 0.125},
        {2, "heldout", 2.718281828459045, 1e-300, 0.0, 0.0, 3600.0},
        {65536, "diverged", -7.3, 0.00390625, 1e18, 9.999999999999998, 1e-9},
    };
    {
        MetricsCsv csv(path);
        for (const auto& r : rows) csv.append(r);
    }
    const auto got = MetricsCsv::read(path);
    ASSERT_EQ(got.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(got[i].step, rows[i].step);
        EXPECT_EQ(got[i].split, rows[i].split);
        EXPECT_EQ(got[i].loss, rows[i].loss);
        EXPECT_EQ(got[i].lr, rows[i].lr);
        EXPECT_EQ(got[i].grad_norm, rows[i].grad_norm);
        EXPECT_EQ(got[i].tokens_per_sec, rows[i].tokens_per_sec);
        EXPECT_EQ(got[i].elapsed_s, rows[i].elapsed_s);
    }
}

TEST(MetricsCsvTest, AppendModeKeepsRowsAndWritesOneHeader) {
    const std::string path = temp_path("append.csv");
    {
        MetricsCsv csv(path);
        csv.append({1, "train", 0.5, 1e-3, 1.0, 100.0, 1.0});
        csv.append({2, "train", 0.4, 1e-3, 1.0, 100.0, 2.0});
    }
    {
        MetricsCsv csv(path, /*append=*/true);
        csv.append({3, "heldout", 0.3, 1e-3, 0.0, 0.0, 3.0});
    }
    const auto rows = MetricsCsv::read(path);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[2].step, 3);
    EXPECT_EQ(rows[2].split, "heldout");

    const std::string text = slurp(path);
    std::size_t headers = 0, at = 0;
    while ((at = text.find("step,split", at)) != std::string::npos) {
        ++headers;
        ++at;
    }
    EXPECT_EQ(headers, 1u);
}

TEST(MetricsCsvTest, AppendToMissingFileStartsWithHeader) {
    const std::string path = temp_path("append_fresh.csv");
    std::filesystem::remove(path);
    MetricsCsv csv(path, /*append=*/true);
    csv.append({1, "train", 0.5, 1e-3, 1.0, 100.0, 1.0});
    const auto rows = MetricsCsv::read(path);
    ASSERT_EQ(rows.size(), 1u);
}

TEST(MetricsCsvTest, RejectsCommaOrNewlineInSplit) {
    MetricsCsv csv(temp_path("reject.csv"));
    EXPECT_THROW(csv.append({1, "tr,ain", 0, 0, 0, 0, 0}), ValueError);
    EXPECT_THROW(csv.append({1, "tr\nain", 0, 0, 0, 0, 0}), ValueError);
}

TEST(MetricsCsvTest, ReadRejectsWrongHeader) {
    const std::string path = temp_path("badheader.csv");
    std::ofstream(path) << "step,loss\n1,0.5\n";
    try {
        MetricsCsv::read(path);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find(":1:"), std::string::npos);
    }
}

TEST(MetricsCsvTest, ReadRejectsShortRowWithLineNumber) {
    const std::string path = temp_path("shortrow.csv");
    std::ofstream(path) << MetricsCsv::kHeader << "\n1,train,0.5\n";
    try {
        MetricsCsv::read(path);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
    }
}

TEST(MetricsCsvTest, ReadRejectsNonNumericField) {
    const std::string path = temp_path("nonnumeric.csv");
    std::ofstream(path) << MetricsCsv::kHeader << "\none,train,0.5,0.1,1,1,1\n";
    EXPECT_THROW(MetricsCsv::read(path), ParseError);
}

TEST(MetricsCsvTest, UnwritablePathThrowsIoError) {
    EXPECT_THROW(MetricsCsv(temp_path("no_such_dir") + "/m.csv"), IoError);
    EXPECT_THROW(MetricsCsv::read(temp_path("never_written.csv")), IoError);
}

// ---------------------------------------------------------------------------
// RougeL
// ---------------------------------------------------------------------------

// Independent LCS: memoized recursion over suffixes, a different shape from
// the iterative two-row table inside rouge_l.
std::int64_t lcs_suffix(const std::vector<int>& a, const std::vector<int>& b, std::size_t i, std::size_t j,
                        std::vector<std::int64_t>& memo) {
    if (i == a.size() || j == b.size()) return 0;
    std::int64_t& slot = memo[i * (b.size() + 1) + j];
    if (slot >= 0) return slot;
    if (a[i] == b[j])
        slot = 1 + lcs_suffix(a, b, i + 1, j + 1, memo);
    else
        slot = std::max(lcs_suffix(a, b, i + 1, j, memo), lcs_suffix(a, b, i, j + 1, memo));
    return slot;
}

double rouge_oracle(const std::vector<int>& cand, const std::vector<int>& ref) {
    if (cand.empty() || ref.empty()) return 0.0;
    std::vector<std::int64_t> memo((cand.size() + 1) * (ref.size() + 1), -1);
    const double lcs = static_cast<double>(lcs_suffix(cand, ref, 0, 0, memo));
    if (lcs == 0) return 0.0;
    const double p = lcs / static_cast<double>(cand.size());
    const double r = lcs / static_cast<double>(ref.size());
    return 2 * p * r / (p + r);
}

TEST(RougeLTest, PinnedWordExample) {
    EXPECT_DOUBLE_EQ(rouge_l_text("the cat", "the cat sat on the mat"), 0.5);
}

TEST(RougeLTest, EmptyOrDisjointScoresZero) {
    EXPECT_EQ(rouge_l_text("", "anything"), 0.0);
    EXPECT_EQ(rouge_l_text("anything", ""), 0.0);
    EXPECT_EQ(rouge_l_text("", ""), 0.0);
    EXPECT_EQ(rouge_l_text("a b c", "x y z"), 0.0);
}

TEST(RougeLTest, IdenticalScoresOne) {
    EXPECT_DOUBLE_EQ(rouge_l_text("a b c d", "a b c d"), 1.0);
    EXPECT_DOUBLE_EQ(rouge_l(std::vector<int>{5, 7, 9}, std::vector<int>{5, 7, 9}), 1.0);
}

TEST(RougeLTest, OrderMatters) {
    // reversal shares only a length-1 subsequence per position chain
    const std::vector<int> fwd{1, 2, 3, 4};
    const std::vector<int> rev{4, 3, 2, 1};
    EXPECT_DOUBLE_EQ(rouge_l(fwd, rev), 0.25);
}

TEST(RougeLTest, MatchesMemoizedRecursionOn100RandomPairs) {
    Rng rng(314159);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = static_cast<std::size_t>(rng.below(13));
        const std::size_t m = static_cast<std::size_t>(rng.below(13));
        std::vector<int> cand(n), ref(m);
        for (auto& x : cand) x = static_cast<int>(rng.below(4));
        for (auto& x : ref) x = static_cast<int>(rng.below(4));
        EXPECT_EQ(rouge_l(cand, ref), rouge_oracle(cand, ref)) << "trial " << trial;
    }
}

}  // namespace
}  // namespace deskt5
