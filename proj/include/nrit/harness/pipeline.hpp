// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nrit/harness/config.hpp"

namespace nrit {

// 1 iff some normalized gold answer is a contiguous token run of the
// normalized generation. ContractError on an empty gold list.
int match_metric(std::string_view generated, std::span<const std::string> gold_answers);

// Empty output (EOT first) or output containing the no-evidence sentence.
bool is_abstention(std::string_view generated);

struct SplitScore {
    std::size_t n = 0;
    std::size_t correct = 0;
    std::size_t abstained = 0;

    // Empty when the split has no instances.
    [[nodiscard]] std::optional<double> accuracy() const;
    [[nodiscard]] std::optional<double> abstain_rate() const;
    bool operator==(const SplitScore&) const = default;
};

struct EvalRecord {
    std::string id;
    std::string generated;
    int match = 0;
    bool abstained = false;
    bool answer_present = false;
};

enum class EvalSplit { all, answer_present, answer_absent };

struct EvalResult {
    std::vector<EvalRecord> records;
    SplitScore all;
    SplitScore present;
    SplitScore absent;
};

// Produces the answer text for one instance given its prompt ids.
using AnswerFn = std::function<std::string(const QAInstance&, std::span<const int>)>;

std::vector<int> qa_prompt_ids(const Tokenizer& tok, const Corpus& corpus, const QAInstance& inst);

EvalResult evaluate(std::span<const QAInstance> qa, const Tokenizer& tok, const Corpus& corpus, const AnswerFn& answer,
                    EvalSplit split = EvalSplit::all);
// Greedy decoding with the dual-instruction prompt.
EvalResult evaluate(const MicroTransformer& model, std::span<const QAInstance> qa, const Tokenizer& tok,
                    const Corpus& corpus, std::size_t max_new, EvalSplit split = EvalSplit::all);

// Every dataset the pipeline derives from a config, rebuilt deterministically.
struct Prepared {
    World world;
    QuerySplit split;
    Tokenizer tok;
    AttributionSets attribution;          // train queries
    AttributionSets attribution_heldout;  // eval queries
    std::vector<DenoiseInstance> denoise_train;
    std::vector<DenoiseInstance> denoise_heldout;
    std::vector<RSInstance> rs;
    std::vector<QAInstance> qa_eval;
    std::vector<std::string> warnings;
};

// Vocabulary: template text, corpus, queries and document numbers 1..top_k.
Tokenizer build_tokenizer(const World& world, std::size_t top_k);
Prepared prepare(const PipelineConfig& config);

struct WarmupData {
    std::vector<TrainingExample> examples;
    std::size_t n_lm = 0;
    std::size_t n_binary = 0;
    std::size_t n_qa = 0;
};

// Corpus language modeling, the YES/NO task on the attribution prompts of the
// training queries, and answer generation on their answer-bearing QA prompts.
WarmupData warmup_examples(const Prepared& prep, const PipelineConfig& config);

// Mean probability of the gold YES/NO token.
double mean_gold_probability(const MicroTransformer& model, const Tokenizer& tok,
                             std::span<const AttributionInstance> instances, ChoiceNormalization norm);

struct EvalReport {
    std::string config_hash;
    Ablation ablation = Ablation::none;
    SplitScore baseline_all;
    SplitScore baseline_present;
    SplitScore baseline_absent;
    SplitScore tuned_all;
    SplitScore tuned_present;
    SplitScore tuned_absent;
    std::size_t trainable = 0;
    std::size_t total = 0;
    double fraction = 0.0;
    std::size_t rel_candidates = 0;
    std::size_t irrel_candidates = 0;
    std::size_t n_rel = 0;
    std::size_t n_irrel = 0;
    std::size_t n_shared = 0;
    std::vector<std::size_t> top_layers;
    std::vector<LayerDensityRow> density;
    double warmup_p_gold = 0.0;
    std::optional<double> eot_before;
    std::optional<double> eot_after;

    bool operator==(const EvalReport& o) const;
};

void save_eval_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport load_eval_report(const std::filesystem::path& path);

// layer,rel,irrel,shared,irrel_plus_shared
void save_density_csv(const std::filesystem::path& path, std::span<const LayerDensityRow> rows);

// "nrit-candidates v1" then group,layer,index,frequency lines (group rel or
// irrel) sorted by (group, layer, index).
void save_candidates(const std::filesystem::path& path, const Candidates& rel, const Candidates& irrel);
std::pair<Candidates, Candidates> load_candidates(const std::filesystem::path& path);

// ContractError unless the groups are pairwise disjoint and rel + shared and
// irrel + shared rebuild the two candidate sets.
void check_set_algebra(const NeuronSets& sets, const Candidates& rel, const Candidates& irrel);

// FNV-1a over the canonical config text, as 16 hex digits.
std::string config_hash(const PipelineConfig& config);

struct RunOptions {
    std::function<void(std::string_view)> log;
};

// Directory layout of one run. Ablation runs read the warm-up model and the
// mined neurons from `shared` and write their own stages under `out`.
struct RunDirs {
    std::filesystem::path out;
    std::filesystem::path shared;

    explicit RunDirs(std::filesystem::path root) : out(root), shared(std::move(root)) {}
    RunDirs(std::filesystem::path o, std::filesystem::path s) : out(std::move(o)), shared(std::move(s)) {}
};

// Individual stages. Each reads what earlier stages persisted and writes its
// own artifacts. A failure is rethrown with the stage name prefixed; config
// and numeric errors keep their type, everything else becomes StageError.
void stage_gen_world(const PipelineConfig& config, const RunDirs& dirs, const RunOptions& options = {});
void stage_warmup(const PipelineConfig& config, const RunDirs& dirs, const RunOptions& options = {});
void stage_attribute(const PipelineConfig& config, const RunDirs& dirs, const RunOptions& options = {});
void stage_mine(const PipelineConfig& config, const RunDirs& dirs, const RunOptions& options = {});
void stage_denoise(const PipelineConfig& config, const RunDirs& dirs, const RunOptions& options = {});
void stage_tune(const PipelineConfig& config, const RunDirs& dirs, const RunOptions& options = {});
EvalReport stage_eval(const PipelineConfig& config, const RunDirs& dirs, const RunOptions& options = {});

EvalReport run_pipeline(const PipelineConfig& config, const std::filesystem::path& out,
                        const RunOptions& options = {});
// Stage 1, stage 2 and evaluation again under out/ablate-<name>, reusing
// the warm-up model and neuron sets of the main run in `out`.
EvalReport run_ablation(const PipelineConfig& config, Ablation ablation, const std::filesystem::path& out,
                        const RunOptions& options = {});

// Side-by-side text table of the eval reports found in out and out/ablate-*.
std::string summarize_reports(const std::filesystem::path& out);

}  // namespace nrit
