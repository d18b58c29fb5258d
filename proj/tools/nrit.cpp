// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver for the pipeline stages.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "nrit/errors.hpp"
#include "nrit/harness/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct Args {
    std::string config;
    std::string out;
    std::string ablate;
    bool with_ablations = false;
    bool quiet = false;
};

nrit::PipelineConfig load(const Args& a) {
    auto c = nrit::load_config(a.config);
    if (!a.ablate.empty()) {
        c.ablation = nrit::parse_ablation(a.ablate);
    }
    return c;
}

void print_report(const nrit::EvalReport& r) {
    auto num = [](std::optional<double> v) { return v ? std::to_string(*v) : std::string("absent"); };
    std::cout << "ablation " << nrit::ablation_name(r.ablation) << '\n'
              << "  answer-present accuracy  " << num(r.baseline_present.accuracy()) << " -> "
              << num(r.tuned_present.accuracy()) << "  (n=" << r.tuned_present.n << ")\n"
              << "  answer-absent abstention " << num(r.baseline_absent.abstain_rate()) << " -> "
              << num(r.tuned_absent.abstain_rate()) << "  (n=" << r.tuned_absent.n << ")\n"
              << "  trainable " << r.trainable << " / " << r.total << " = " << r.fraction << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"nrit: context-aware neuron tuning on a synthetic retrieval world"};
    app.require_subcommand(1);
    Args args;

    auto add = [&](const std::string& name, const std::string& help) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", args.config, "pipeline config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", args.out, "run directory")->required();
        sub->add_flag("--quiet", args.quiet, "suppress progress lines");
        return sub;
    };
    auto* gen = add("gen-world", "generate the world, tokenizer and datasets");
    auto* warm = add("warmup", "train the base model");
    auto* attr = add("attribute", "integrated-gradients attribution matrix");
    auto* mine = add("mine", "mine and decouple context-aware neurons");
    auto* den = add("denoise", "stage 1: EOT denoising of irrelevant neurons");
    den->add_option("--ablate", args.ablate, "none|no-denoise|no-neurons|no-layers");
    auto* tune = add("tune", "stage 2: masked noise-filter tuning");
    tune->add_option("--ablate", args.ablate, "none|no-denoise|no-neurons|no-layers");
    auto* ev = add("eval", "evaluate baseline and tuned models");
    ev->add_option("--ablate", args.ablate, "none|no-denoise|no-neurons|no-layers");
    auto* all = add("run-all", "every stage in order");
    all->add_option("--ablate", args.ablate, "none|no-denoise|no-neurons|no-layers");
    all->add_flag("--with-ablations", args.with_ablations, "also run the three ablations under <out>/ablate-*");
    auto* rep = app.add_subcommand("report", "table of the eval reports under --out");
    rep->add_option("--config", args.config, "pipeline config file (unused)");
    rep->add_option("--out", args.out, "run directory")->required()->check(CLI::ExistingDirectory);

    CLI11_PARSE(app, argc, argv);

    nrit::RunOptions opt;
    opt.log = [&](std::string_view s) {
        if (!args.quiet) {
            std::cerr << s << std::endl;
        }
    };

    try {
        if (rep->parsed()) {
            std::cout << nrit::summarize_reports(args.out);
            return 0;
        }
        const auto config = load(args);
        const nrit::RunDirs dirs{fs::path(args.out)};
        if (gen->parsed()) {
            nrit::stage_gen_world(config, dirs, opt);
        } else if (warm->parsed()) {
            nrit::stage_warmup(config, dirs, opt);
        } else if (attr->parsed()) {
            nrit::stage_attribute(config, dirs, opt);
        } else if (mine->parsed()) {
            nrit::stage_mine(config, dirs, opt);
        } else if (den->parsed()) {
            nrit::stage_denoise(config, dirs, opt);
        } else if (tune->parsed()) {
            nrit::stage_tune(config, dirs, opt);
        } else if (ev->parsed()) {
            print_report(nrit::stage_eval(config, dirs, opt));
        } else if (all->parsed()) {
            print_report(nrit::run_pipeline(config, args.out, opt));
            if (args.with_ablations) {
                for (auto a : {nrit::Ablation::no_denoise, nrit::Ablation::no_neurons, nrit::Ablation::no_layers}) {
                    print_report(nrit::run_ablation(config, a, args.out, opt));
                }
                std::cout << nrit::summarize_reports(args.out);
            }
        }
    } catch (const nrit::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const nrit::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "stage failure: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
