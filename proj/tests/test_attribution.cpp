// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>
#include <sstream>

#include "doctest.h"
#include "nrit/attribution/attribution.hpp"
#include "nrit/data/prompts.hpp"
#include "nrit/errors.hpp"

using namespace nrit;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("nrit_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

AttributionInstance sample_instance(ContextType type) {
    AttributionInstance a;
    a.id = type == ContextType::rel ? "q1-rel" : "q1-irrel";
    a.question = "what is the capital of zorbia ?";
    a.context = type == ContextType::rel ? "the capital of zorbia is melk ." : "the color of brindle is teal .";
    a.proposed_answer = "melk";
    a.gold = type == ContextType::rel ? 0 : 1;
    a.type = type;
    return a;
}

struct Fixture {
    Tokenizer tok;
    MicroTransformer model;

    Fixture() : tok(make_tok()), model(make_config(tok.size())) {}

    static Tokenizer make_tok() {
        auto texts = template_texts();
        for (auto t : {ContextType::rel, ContextType::irrel}) {
            const auto a = sample_instance(t);
            texts.push_back(a.question + " " + a.context + " " + a.proposed_answer);
        }
        return Tokenizer::build(texts);
    }

    static ModelConfig make_config(std::size_t vocab) {
        ModelConfig c;
        c.n_layers = 2;
        c.d_model = 16;
        c.n_heads = 2;
        c.d_ff = 12;
        c.max_seq_len = 96;
        c.vocab_size = vocab;
        c.init_seed = 7;
        c.init_std = 0.4;
        return c;
    }
};

Tensor vec(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

}  // namespace

TEST_CASE("integrated gradients: square and affine closures") {
    const IGClosure square = [](Graph& g, const Tensor& v) {
        Var x = g.input(v);
        return std::pair<Var, Var>{ops::sum(ops::mul(x, x)), x};
    };
    const auto s = integrated_gradients(vec({0.0}), vec({1.0}), 20, square);
    REQUIRE(s.size() == 1);
    CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-12));

    // Linear functions integrate exactly at any step count.
    const std::vector<double> w{0.5, -2.0, 3.0};
    const IGClosure affine = [&](Graph& g, const Tensor& v) {
        Var x = g.input(v);
        Var y = ops::sum(ops::mul(x, g.constant(vec(w))));
        return std::pair<Var, Var>{ops::add(y, g.constant(Tensor::scalar(4.0))), x};
    };
    const Tensor b = vec({1.0, 2.0, -1.0});
    const Tensor t = vec({0.0, 5.0, 2.0});
    for (std::size_t steps : {1U, 3U, 20U}) {
        const auto a = integrated_gradients(b, t, steps, affine);
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(a[j] == doctest::Approx(w[j] * (t.data[j] - b.data[j])).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(static_cast<void>(integrated_gradients(b, t, 0, affine)), ConfigError);
    CHECK_THROWS_AS(static_cast<void>(integrated_gradients(b, vec({1.0}), 5, affine)), ContractError);
}

TEST_CASE("integrated gradients: non-finite gradient names the location") {
    const IGClosure bad = [](Graph& g, const Tensor& v) {
        Var x = g.input(v);
        return std::pair<Var, Var>{ops::sum(ops::log(x)), x};
    };
    try {
        static_cast<void>(integrated_gradients(vec({0.0}), vec({0.0}), 2, bad, "instance z, layer 3"));
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("instance z, layer 3") != std::string::npos);
    }
}

TEST_CASE("attribution on the model: completeness") {
    Fixture fx;
    for (auto type : {ContextType::rel, ContextType::irrel}) {
        const auto enc = encode_attribution(fx.tok, sample_instance(type));
        CHECK(enc.gold_token == (type == ContextType::rel ? Tokenizer::kYes : Tokenizer::kNo));
        CHECK(enc.full_ids.size() > enc.query_ids.size());
        for (std::size_t layer = 0; layer < 2; ++layer) {
            IGConfig cfg;
            const auto la = integrated_gradients_layer(fx.model, enc, layer, cfg);
            REQUIRE(la.scores.size() == 12);
            const auto f = attribution_closure(fx.model, enc, layer, cfg);
            const double delta = evaluate_closure(f, la.target) - evaluate_closure(f, la.base);
            double total = 0.0;
            for (double v : la.scores) {
                total += v;
            }
            CHECK(std::abs(total - delta) <= 1e-2);

            cfg.steps = 200;
            const auto fine = integrated_gradients_layer(fx.model, enc, layer, cfg);
            double fine_total = 0.0;
            for (double v : fine.scores) {
                fine_total += v;
            }
            CHECK(std::abs(fine_total - delta) <= 1e-3);

            cfg.steps = 20;
            cfg.target = IGTarget::loss;
            const auto lossy = integrated_gradients_layer(fx.model, enc, layer, cfg);
            const auto fl = attribution_closure(fx.model, enc, layer, cfg);
            double loss_total = 0.0;
            for (double v : lossy.scores) {
                loss_total += v;
            }
            const double loss_delta = evaluate_closure(fl, la.target) - evaluate_closure(fl, la.base);
            CHECK(std::abs(loss_total - loss_delta) <= 1e-2 * std::max(1.0, std::abs(loss_delta)));
        }
    }
}

TEST_CASE("attribution on the model: degenerate cases give zeros") {
    Fixture fx;
    auto enc = encode_attribution(fx.tok, sample_instance(ContextType::rel));
    IGConfig cfg;

    auto same = enc;
    same.query_ids = same.full_ids;
    for (double v : integrated_gradients_layer(fx.model, same, 1, cfg).scores) {
        CHECK(v == 0.0);
    }

    fx.model.param(MicroTransformer::block_prefix(0) + "ffn.w2").value.fill(0.0);
    for (double v : integrated_gradients_layer(fx.model, enc, 0, cfg).scores) {
        CHECK(v == 0.0);
    }
    CHECK_THROWS_AS(static_cast<void>(integrated_gradients_layer(fx.model, enc, 2, cfg)), IndexError);
}

TEST_CASE("attribution matrix: per-layer rows, thread independence, persistence") {
    Fixture fx;
    const std::vector<AttributionInstance> insts{sample_instance(ContextType::rel),
                                                 sample_instance(ContextType::irrel)};
    IGConfig cfg;
    cfg.steps = 5;
    const auto m1 = compute_attribution_matrix(fx.model, fx.tok, insts, cfg);
    AttributionRunOptions opts;
    opts.threads = 3;
    std::size_t calls = 0;
    opts.progress = [&](std::size_t, std::size_t total) {
        ++calls;
        CHECK(total == 2);
    };
    const auto m3 = compute_attribution_matrix(fx.model, fx.tok, insts, cfg, opts);
    CHECK(calls == 2);
    CHECK(m1 == m3);
    REQUIRE(m1.size() == 2);
    CHECK(m1.width() == 24);
    CHECK(m1.id(0) == "q1-rel");
    CHECK(m1.type(1) == ContextType::irrel);
    CHECK(m1.rows_of(ContextType::irrel) == std::vector<std::size_t>{1});

    const auto enc = encode_attribution(fx.tok, insts[1]);
    const auto l1 = integrated_gradients_layer(fx.model, enc, 1, cfg);
    for (std::size_t j = 0; j < 12; ++j) {
        CHECK(m1.score(1, {1, j}) == l1.scores[j]);
    }

    const auto dir = temp_dir("attr_matrix");
    m1.save(dir / "a.bin");
    CHECK(AttributionMatrix::load(dir / "a.bin") == m1);

    AttributionMatrix bad(1, 2);
    CHECK_THROWS_AS(bad.add("x", ContextType::rel, {1.0, std::numeric_limits<double>::quiet_NaN()}), NumericError);
    CHECK_THROWS_AS(bad.add("x", ContextType::rel, {1.0}), ContractError);
}

TEST_CASE("nearest rank") {
    CHECK(nearest_rank(0.9, 10) == 9);
    CHECK(nearest_rank(0.9, 1) == 1);
    CHECK(nearest_rank(0.5, 3) == 2);
    CHECK(nearest_rank(0.7, 10) == 7);
    CHECK(nearest_rank(0.9, 768 * 32) == 22119);
    CHECK(nearest_rank(0.01, 10) == 1);
    CHECK_THROWS_AS(static_cast<void>(nearest_rank(0.5, 0)), ContractError);
}

TEST_CASE("mining: worked example and validation") {
    // One layer of ten neurons; each row puts its two picks on top.
    AttributionMatrix m(1, 10);
    auto row = [](std::size_t a, std::size_t b) {
        std::vector<double> r(10, 0.0);
        r[a] = 1.0;
        r[b] = 0.9;
        return r;
    };
    m.add("a", ContextType::rel, row(1, 2));
    m.add("b", ContextType::rel, row(1, 3));
    m.add("c", ContextType::rel, row(1, 2));
    MiningConfig cfg;
    cfg.percentile = 0.8;
    cfg.top_k = 2;
    cfg.threshold = 2;
    const std::vector<std::size_t> rows{0, 1, 2};
    const auto c = mine_candidates(m, rows, cfg);
    CHECK(c.selected == std::set<NeuronId>{{0, 1}, {0, 2}});
    CHECK(c.frequency.at({0, 1}) == 3);
    CHECK(c.frequency.at({0, 2}) == 2);
    CHECK(c.frequency.at({0, 3}) == 1);

    cfg.aggregation = Aggregation::top_t;
    cfg.top_t = 1;
    CHECK(mine_candidates(m, rows, cfg).selected == std::set<NeuronId>{{0, 1}});

    CHECK_THROWS_AS(static_cast<void>(mine_candidates(m, std::vector<std::size_t>{}, cfg)), ConfigError);
    cfg.top_t = 0;
    CHECK_THROWS_AS(static_cast<void>(mine_candidates(m, rows, cfg)), ConfigError);
    MiningConfig p;
    p.percentile = 1.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("mining: brute-force oracle over random matrices") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n_layers = 1 + rng() % 4;
        const std::size_t d_ff = 1 + rng() % 16;
        const std::size_t width = n_layers * d_ff;
        const std::size_t n_rows = 1 + rng() % 10;
        AttributionMatrix m(n_layers, d_ff);
        std::vector<std::vector<double>> data;
        for (std::size_t r = 0; r < n_rows; ++r) {
            std::vector<double> row(width);
            // Few distinct values so ties are common.
            for (auto& v : row) {
                v = static_cast<double>(static_cast<int>(rng() % 5) - 2);
            }
            data.push_back(row);
            m.add("r" + std::to_string(r), ContextType::rel, row);
        }
        MiningConfig cfg;
        const std::size_t pct = 5 + rng() % 90;
        cfg.percentile = static_cast<double>(pct) / 100.0;
        cfg.top_k = 1 + rng() % 6;
        const bool use_top_t = rng() % 2 == 0;
        cfg.aggregation = use_top_t ? Aggregation::top_t : Aggregation::threshold;
        cfg.threshold = 1 + rng() % 4;
        cfg.top_t = 1 + rng() % 6;

        // Oracle: integer nearest rank, then repeated arg-max with the
        // smallest flat index winning ties.
        std::vector<std::size_t> freq(width, 0);
        for (const auto& row : data) {
            std::vector<double> sorted = row;
            std::sort(sorted.begin(), sorted.end());
            const std::size_t rank = std::max<std::size_t>(1, (pct * width + 99) / 100);
            const double cutoff = sorted[rank - 1];
            std::vector<bool> taken(width, false);
            for (std::size_t pick = 0; pick < cfg.top_k; ++pick) {
                std::size_t best = width;
                for (std::size_t i = 0; i < width; ++i) {
                    if (taken[i] || row[i] < cutoff) {
                        continue;
                    }
                    if (best == width || row[i] > row[best]) {
                        best = i;
                    }
                }
                if (best == width) {
                    break;
                }
                taken[best] = true;
                ++freq[best];
            }
        }
        std::set<NeuronId> expected;
        if (use_top_t) {
            std::vector<bool> taken(width, false);
            for (std::size_t pick = 0; pick < cfg.top_t; ++pick) {
                std::size_t best = width;
                for (std::size_t i = 0; i < width; ++i) {
                    if (!taken[i] && freq[i] > 0 && (best == width || freq[i] > freq[best])) {
                        best = i;
                    }
                }
                if (best == width) {
                    break;
                }
                taken[best] = true;
                expected.insert({best / d_ff, best % d_ff});
            }
        } else {
            for (std::size_t i = 0; i < width; ++i) {
                if (freq[i] >= cfg.threshold) {
                    expected.insert({i / d_ff, i % d_ff});
                }
            }
        }

        std::vector<std::size_t> rows(n_rows);
        for (std::size_t r = 0; r < n_rows; ++r) {
            rows[r] = r;
        }
        const auto got = mine_candidates(m, rows, cfg);
        CHECK(got.selected == expected);
        for (std::size_t i = 0; i < width; ++i) {
            const auto it = got.frequency.find({i / d_ff, i % d_ff});
            CHECK((it == got.frequency.end() ? 0 : it->second) == freq[i]);
        }

        std::shuffle(rows.begin(), rows.end(), rng);
        CHECK(mine_candidates(m, rows, cfg).selected == expected);
    }
}

TEST_CASE("decouple, layer density and top-k layers") {
    Candidates rel;
    rel.selected = {{0, 1}, {1, 2}, {2, 3}};
    rel.frequency = {{{0, 1}, 5}, {{1, 2}, 4}, {{2, 3}, 3}, {{3, 0}, 1}};
    Candidates irrel;
    irrel.selected = {{1, 2}, {3, 3}};
    irrel.frequency = {{{1, 2}, 6}, {{3, 3}, 2}};
    const auto s = decouple(rel, irrel);
    CHECK(s.rel == std::set<NeuronId>{{0, 1}, {2, 3}});
    CHECK(s.irrel == std::set<NeuronId>{{3, 3}});
    CHECK(s.shared == std::set<NeuronId>{{1, 2}});
    CHECK(s.frequency.at({1, 2}) == 10);
    CHECK(s.frequency.at({0, 1}) == 5);
    CHECK(s.frequency.size() == 4);
    CHECK(s.all().size() == 4);

    const auto d = layer_density(s, 4);
    REQUIRE(d.size() == 4);
    CHECK(d[1].shared == 1);
    CHECK(d[3].irrel == 1);
    CHECK(d[0].rel == 1);
    CHECK_THROWS_AS(static_cast<void>(layer_density(s, 3)), IndexError);

    // shared + irrel counts per layer {1, 5, 2, 7, 6}.
    NeuronSets t;
    const std::vector<std::size_t> counts{1, 5, 2, 7, 6};
    for (std::size_t l = 0; l < counts.size(); ++l) {
        for (std::size_t i = 0; i < counts[l]; ++i) {
            (i % 2 == 0 ? t.irrel : t.shared).insert({l, i});
        }
        t.rel.insert({l, 100});
    }
    CHECK(top_k_layers(t, 5, 3) == std::vector<std::size_t>{3, 4, 1});
    CHECK(top_k_layers(NeuronSets{}, 5, 2) == std::vector<std::size_t>{4, 3});
    CHECK_THROWS_AS(static_cast<void>(top_k_layers(t, 5, 6)), ConfigError);
}

TEST_CASE("neuron set file: format and round trip") {
    NeuronSets s;
    s.rel = {{2, 7}, {0, 3}};
    s.irrel = {{1, 1}};
    s.shared = {{0, 4}};
    s.frequency = {{{2, 7}, 9}, {{0, 3}, 4}, {{1, 1}, 2}, {{0, 4}, 11}};
    const auto dir = temp_dir("neurons");
    save_neuron_sets(dir / "n.txt", s);
    std::ifstream in(dir / "n.txt");
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    CHECK(text == "nrit-neurons v1\nirrel,1,1,2\nrel,0,3,4\nrel,2,7,9\nshared,0,4,11\n");
    CHECK(load_neuron_sets(dir / "n.txt") == s);

    NeuronSets overlap = s;
    overlap.irrel.insert({0, 3});
    CHECK_THROWS_AS(save_neuron_sets(dir / "bad.txt", overlap), ContractError);
    {
        std::ofstream bad(dir / "bad.txt");
        bad << "nrit-neurons v1\nboth,0,1,1\n";
    }
    CHECK_THROWS_AS(static_cast<void>(load_neuron_sets(dir / "bad.txt")), IoError);
}
