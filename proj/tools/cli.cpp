#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "civic/attribution.hpp"
#include "civic/baseline.hpp"
#include "civic/checkpoint.hpp"
#include "civic/error.hpp"
#include "civic/eval.hpp"
#include "civic/fewshot.hpp"
#include "civic/ingest.hpp"
#include "civic/log.hpp"
#include "civic/manifest.hpp"
#include "civic/neural.hpp"
#include "civic/rng.hpp"
#include "civic/tokenizer.hpp"
#include "civic/training.hpp"

namespace civic::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr const char* kDefaultEndpoint = "https://civicdb.org/api/graphql";

std::ifstream open_in(const fs::path& p, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(p, mode);
    if (!in) throw DataError("cannot open " + p.string());
    return in;
}

std::string slurp(const fs::path& p) {
    auto in = open_in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

template <class F>
void write_file(const fs::path& p, F&& body) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    body(out);
    if (!out) throw DataError("write failed for " + p.string());
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
    fs::path q = p;
    q.replace_extension();
    return q.string() + suffix;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

ingest::DatasetSplit load_split(const fs::path& p) {
    auto in = open_in(p);
    return ingest::read_split_jsonl(in);
}

tokenizer::Vocab load_vocab(const fs::path& p) {
    auto in = open_in(p);
    return tokenizer::Vocab::load(in);
}

/// Abstracts of a JSONL item file (training split only when split tags are present) or one text per line.
std::vector<std::string> load_corpus(const fs::path& p) {
    auto in = open_in(p);
    std::vector<std::string> texts;
    std::string line;
    bool jsonl = false, first = true;
    while (std::getline(in, line)) {
        const auto start = line.find_first_not_of(" \t\r");
        if (start == std::string::npos) continue;
        if (first) {
            jsonl = line[start] == '{';
            first = false;
        }
        if (!jsonl) {
            texts.push_back(line);
            continue;
        }
        try {
            const auto j = json::parse(line);
            if (j.contains("split") && j.at("split") != "train") continue;
            texts.push_back(j.at("abstract").get<std::string>());
        } catch (const json::exception& e) {
            throw DataError(p.string() + ": " + e.what());
        }
    }
    return texts;
}

struct ModelOptions {
    neural::ModelConfig config;

    void add(CLI::App* app) {
        app->add_option("--blocks", config.num_blocks, "encoder blocks")->capture_default_str();
        app->add_option("--context", config.context_width, "context width")->capture_default_str();
        app->add_option("--embed", config.embed_dim, "embedding width")->capture_default_str();
        app->add_option("--hidden", config.hidden_dim, "feed-forward width")->capture_default_str();
        app->add_option("--heads", config.num_heads, "attention heads")->capture_default_str();
    }
};

class Manifest {
public:
    Manifest(std::string command, const CLI::App* sub) : sub_(sub) {
        m_.command = std::move(command);
        m_.started_at = manifest::utc_timestamp();
    }
    void input(const fs::path& p) { m_.add_input(p); }
    void output(const fs::path& p) { m_.add_output(p); }
    void seed(std::uint64_t s) { m_.seeds.push_back(s); }

    void finish(const fs::path& primary) {
        for (const auto* opt : sub_->get_options()) {
            if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
            std::string value;
            if (opt->count() > 0) {
                for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
            } else {
                value = opt->get_default_str();
            }
            m_.config[opt->get_lnames().front()] = value;
        }
        m_.finished_at = manifest::utc_timestamp();
        write_file(with_suffix(primary, ".manifest.json"), [&](std::ostream& o) { manifest::write_manifest(o, m_); });
    }

private:
    manifest::RunManifest m_;
    const CLI::App* sub_;
};

std::string dataset_stats_table(const ingest::DatasetSplit& split) {
    std::vector<ingest::EvidenceItem> all;
    for (const auto* part : {&split.train, &split.validation, &split.test}) all.insert(all.end(), part->begin(), part->end());
    std::ostringstream out;
    out << std::left << std::setw(12) << "split" << std::right << std::setw(8) << "items";
    for (Level l : kAllLevels) out << std::setw(16) << std::string(1, level_letter(l));
    out << '\n';
    const auto row = [&](const char* name, std::span<const ingest::EvidenceItem> items) {
        const auto counts = ingest::class_counts(items);
        std::size_t total = 0;
        for (auto c : counts) total += c;
        out << std::left << std::setw(12) << name << std::right << std::setw(8) << items.size();
        for (auto c : counts) {
            std::ostringstream cell;
            cell << c << " (" << std::fixed << std::setprecision(1) << (total ? 100.0 * static_cast<double>(c) / static_cast<double>(total) : 0.0)
                 << "%)";
            out << std::setw(16) << cell.str();
        }
        out << '\n';
    };
    row("overall", all);
    row("train", split.train);
    row("validation", split.validation);
    row("test", split.test);
    return out.str();
}

std::vector<eval::Scores> baseline_scores(const baseline::BaselineModel& model, std::span<const ingest::EvidenceItem> items) {
    std::vector<eval::Scores> out;
    for (const auto& it : items) out.push_back(baseline::predict_proba(model, it.abstract));
    return out;
}

std::vector<LabelVector> gold_of(std::span<const ingest::EvidenceItem> items) {
    std::vector<LabelVector> out;
    for (const auto& it : items) out.push_back(it.labels);
    return out;
}

std::vector<eval::PredictionRecord> prediction_records(std::span<const ingest::EvidenceItem> items, std::span<const eval::Scores> scores,
                                                       const eval::ThresholdSet& thresholds) {
    const auto predicted = eval::apply_thresholds(scores, thresholds);
    std::vector<eval::PredictionRecord> out;
    for (std::size_t i = 0; i < items.size(); ++i)
        out.push_back({std::to_string(items[i].pubmed_id), scores[i], predicted[i], items[i].labels});
    return out;
}

eval::MetricsReport metrics_of(std::span<const eval::PredictionRecord> records) {
    std::vector<LabelVector> pred, gold;
    for (const auto& r : records) {
        pred.push_back(r.predicted);
        gold.push_back(r.gold);
    }
    return eval::compute_metrics(pred, gold);
}

/// CSV at `out`, aligned text next to it, and a box-plot CSV when there are several runs.
void write_metrics(const fs::path& out, std::vector<eval::NamedReport> rows, Manifest& manifest, std::ostream& console) {
    if (rows.size() > 1) {
        std::vector<eval::MetricsReport> reports;
        for (const auto& r : rows) reports.push_back(r.report);
        const auto box = with_suffix(out, ".boxplot.csv");
        write_file(box, [&](std::ostream& o) { eval::write_seed_distribution_csv(o, reports); });
        manifest.output(box);
        rows.push_back({"mean", eval::aggregate_seeds(reports).mean});
    }
    write_file(out, [&](std::ostream& o) { eval::write_metrics_csv(o, rows); });
    const auto txt = with_suffix(out, ".txt");
    write_file(txt, [&](std::ostream& o) { eval::write_metrics_table(o, rows); });
    eval::write_metrics_table(console, rows);
    manifest.output(out);
    manifest.output(txt);
}

training::ModelFactory factory_for(const std::optional<neural::EncoderModel>& init, const neural::ModelConfig& config) {
    return [init, config](std::uint64_t seed) {
        if (!init) return neural::init_model(config, seed);
        neural::EncoderModel m = *init;
        Rng rng(Rng::derive(seed, 0xC15));
        for (Eigen::Index i = 0; i < m.params.cls_head.size(); ++i) m.params.cls_head.data()[i] = 0.02 * rng.normal();
        return m;
    };
}

void write_trace(const fs::path& p, const training::FinetuneResult& r) {
    write_file(p, [&](std::ostream& o) {
        o << "epoch,train_loss,validation_loss\n";
        for (const auto& e : r.trace) o << e.epoch << ',' << std::setprecision(10) << e.train_loss << ',' << e.validation_loss << '\n';
    });
}

void write_grid(const fs::path& out, const training::GridResult& g, Manifest& manifest) {
    write_file(out, [&](std::ostream& o) { o << training::format_grid_table(g); });
    const auto csv = with_suffix(out, ".csv");
    write_file(csv, [&](std::ostream& o) {
        o << "batch_size,learning_rate,mean_best_validation_loss\n";
        for (const auto& c : g.cells) o << c.batch_size << ',' << c.learning_rate << ',' << std::setprecision(10) << c.mean_loss << '\n';
    });
    manifest.output(out);
    manifest.output(csv);
}

std::optional<Level> level_option(const std::string& s) {
    if (s == "all") return std::nullopt;
    const auto l = parse_level(s);
    if (!l) throw std::invalid_argument("class must be A..E or all, got '" + s + "'");
    return l;
}

std::vector<std::string> move_config_first(const std::vector<std::string>& args) {
    std::vector<std::string> out = args;
    for (std::size_t i = 1; i + 1 < out.size(); ++i) {
        if (out[i] == "--config") {
            std::vector<std::string> moved{out[i], out[i + 1]};
            out.erase(out.begin() + static_cast<std::ptrdiff_t>(i), out.begin() + static_cast<std::ptrdiff_t>(i + 2));
            out.insert(out.begin(), moved.begin(), moved.end());
            break;
        }
    }
    return out;
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Evidence-level classification toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML config file; options go under [subcommand] sections");

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "Fetch or load evidence records, filter, compile and split");
    std::string endpoint = kDefaultEndpoint, ingest_out, fixture, ratios_text = "0.8,0.1,0.1";
    std::uint64_t ingest_seed = 0;
    int page_size = 100;
    ingest_cmd->add_option("--endpoint", endpoint, "GraphQL endpoint")->capture_default_str();
    ingest_cmd->add_option("--out", ingest_out, "split JSONL")->required();
    ingest_cmd->add_option("--seed", ingest_seed)->capture_default_str();
    ingest_cmd->add_option("--ratios", ratios_text, "train,validation,test")->capture_default_str();
    ingest_cmd->add_option("--from-fixture", fixture, "read records from a JSON file instead of the API")->check(CLI::ExistingFile);
    ingest_cmd->add_option("--page-size", page_size)->capture_default_str();

    // tokenizer
    auto* tok_cmd = app.add_subcommand("tokenizer", "Subword vocabulary");
    auto* tok_train = tok_cmd->add_subcommand("train", "Learn a vocabulary");
    tok_cmd->require_subcommand(1);
    std::string tok_corpus, tok_out;
    std::size_t tok_size = 8192;
    tok_train->add_option("--corpus", tok_corpus, "JSONL items or one text per line")->required()->check(CLI::ExistingFile);
    tok_train->add_option("--size", tok_size)->capture_default_str();
    tok_train->add_option("--out", tok_out, "vocabulary file")->required();

    // baseline
    auto* base_cmd = app.add_subcommand("baseline", "tf-idf logistic regression");
    base_cmd->require_subcommand(1);
    auto* base_train = base_cmd->add_subcommand("train", "Fit on the training split");
    auto* base_eval = base_cmd->add_subcommand("eval", "Calibrate on validation, score the test split");
    std::string base_data, base_out, base_model;
    double base_reg = 1.0;
    for (auto* sc : {base_train, base_eval}) {
        sc->add_option("--data", base_data, "split JSONL")->required()->check(CLI::ExistingFile);
        sc->add_option("--out", base_out)->required();
    }
    base_train->add_option("--reg", base_reg)->capture_default_str();
    base_eval->add_option("--model", base_model, "baseline JSON")->required()->check(CLI::ExistingFile);

    // pretrain
    auto* pre_cmd = app.add_subcommand("pretrain", "Masked language model pretraining");
    std::string pre_corpus, pre_vocab, pre_out, pre_init;
    training::TrainSchedule schedule;
    double clip = 5.0, heldout_fraction = 0.05;
    ModelOptions pre_model;
    pre_cmd->add_option("--corpus", pre_corpus)->required()->check(CLI::ExistingFile);
    pre_cmd->add_option("--vocab", pre_vocab)->required()->check(CLI::ExistingFile);
    pre_cmd->add_option("--out", pre_out, "checkpoint")->required();
    pre_cmd->add_option("--init", pre_init, "continue from a checkpoint")->check(CLI::ExistingFile);
    pre_cmd->add_option("--steps", schedule.steps)->capture_default_str();
    pre_cmd->add_option("--batch", schedule.batch_size)->capture_default_str();
    pre_cmd->add_option("--accum", schedule.grad_accumulation)->capture_default_str();
    pre_cmd->add_option("--lr", schedule.learning_rate)->capture_default_str();
    pre_cmd->add_option("--warmup", schedule.warmup_steps)->capture_default_str();
    pre_cmd->add_option("--clip", clip, "0 disables clipping")->capture_default_str();
    pre_cmd->add_option("--seed", schedule.seed)->capture_default_str();
    pre_cmd->add_option("--heldout", heldout_fraction, "fraction of the corpus held out")->capture_default_str();
    pre_model.add(pre_cmd);

    // extend-context
    auto* ext_cmd = app.add_subcommand("extend-context", "Tile positional encodings to a wider context");
    std::string ext_in, ext_out;
    int factor = 2;
    ext_cmd->add_option("--in", ext_in)->required()->check(CLI::ExistingFile);
    ext_cmd->add_option("--out", ext_out)->required();
    ext_cmd->add_option("--factor", factor)->capture_default_str();

    // finetune + grid-search
    auto* ft_cmd = app.add_subcommand("finetune", "Multi-label fine-tuning");
    auto* grid_cmd = app.add_subcommand("grid-search", "Learning rate x batch size search");
    std::string ft_data, ft_vocab, ft_out, ft_init;
    double ft_lr = 6e-6;
    int ft_batch = 16, ft_epochs = 20;
    std::vector<std::uint64_t> ft_seeds{0};
    bool ft_grid = false;
    training::FinetuneGrid grid;
    ModelOptions ft_model;
    for (auto* sc : {ft_cmd, grid_cmd}) {
        sc->add_option("--data", ft_data, "split JSONL")->required()->check(CLI::ExistingFile);
        sc->add_option("--vocab", ft_vocab)->required()->check(CLI::ExistingFile);
        sc->add_option("--out", ft_out)->required();
        sc->add_option("--init", ft_init, "pretrained checkpoint; fresh model when absent")->check(CLI::ExistingFile);
        sc->add_option("--epochs", ft_epochs)->capture_default_str();
        sc->add_option("--seeds", ft_seeds)->delimiter(',')->capture_default_str();
        sc->add_option("--grid-lrs", grid.learning_rates)->delimiter(',')->capture_default_str();
        sc->add_option("--grid-batches", grid.batch_sizes)->delimiter(',')->capture_default_str();
        ft_model.add(sc);
    }
    ft_cmd->add_option("--lr", ft_lr)->capture_default_str();
    ft_cmd->add_option("--batch", ft_batch)->capture_default_str();
    ft_cmd->add_flag("--grid", ft_grid, "pick lr and batch size by grid search first");

    // calibrate
    auto* cal_cmd = app.add_subcommand("calibrate", "Per-class thresholds from the validation split");
    std::string cal_data, cal_vocab, cal_ckpt, cal_baseline, cal_out;
    cal_cmd->add_option("--data", cal_data)->required()->check(CLI::ExistingFile);
    cal_cmd->add_option("--ckpt", cal_ckpt)->check(CLI::ExistingFile);
    cal_cmd->add_option("--vocab", cal_vocab)->check(CLI::ExistingFile);
    cal_cmd->add_option("--baseline", cal_baseline)->check(CLI::ExistingFile);
    cal_cmd->add_option("--out", cal_out, "thresholds JSON")->required();

    // evaluate
    auto* ev_cmd = app.add_subcommand("evaluate", "Per-class and weighted F1 on the test split");
    std::vector<std::string> ev_predictions, ev_ckpts;
    std::string ev_data, ev_vocab, ev_baseline, ev_thresholds, ev_out;
    ev_cmd->add_option("--predictions", ev_predictions, "prediction JSONL files, one per run")->check(CLI::ExistingFile);
    ev_cmd->add_option("--ckpt", ev_ckpts, "checkpoints, one per run")->check(CLI::ExistingFile);
    ev_cmd->add_option("--baseline", ev_baseline)->check(CLI::ExistingFile);
    ev_cmd->add_option("--data", ev_data)->check(CLI::ExistingFile);
    ev_cmd->add_option("--vocab", ev_vocab)->check(CLI::ExistingFile);
    ev_cmd->add_option("--thresholds", ev_thresholds, "fixed thresholds; calibrated on validation when absent")->check(CLI::ExistingFile);
    ev_cmd->add_option("--out", ev_out, "metrics CSV")->required();

    // explain
    auto* ex_cmd = app.add_subcommand("explain", "Integrated-gradients token attributions");
    std::string ex_ckpt, ex_vocab, ex_data, ex_class = "all", ex_baseline = "pad", ex_out;
    int ex_steps = 256;
    std::size_t ex_items = 20, ex_k = 10;
    std::uint64_t ex_seed = 0;
    ex_cmd->add_option("--ckpt", ex_ckpt)->required()->check(CLI::ExistingFile);
    ex_cmd->add_option("--vocab", ex_vocab)->required()->check(CLI::ExistingFile);
    ex_cmd->add_option("--data", ex_data)->required()->check(CLI::ExistingFile);
    ex_cmd->add_option("--class", ex_class, "A..E or all")->capture_default_str();
    ex_cmd->add_option("--baseline", ex_baseline)->check(CLI::IsMember({"zero", "pad"}))->capture_default_str();
    ex_cmd->add_option("--steps", ex_steps)->capture_default_str();
    ex_cmd->add_option("--items", ex_items, "test items per class")->capture_default_str();
    ex_cmd->add_option("--k", ex_k, "tokens per class in the table")->capture_default_str();
    ex_cmd->add_option("--seed", ex_seed)->capture_default_str();
    ex_cmd->add_option("--out", ex_out, "attribution JSONL")->required();

    // fewshot
    auto* fs_cmd = app.add_subcommand("fewshot", "N-shot prompting on the reduced test set");
    std::string fs_data, fs_client = "mock", fs_mock = "oracle", fs_out;
    fewshot::FewShotOptions fs_opts;
    int per_level = 4;
    fs_cmd->add_option("--data", fs_data)->required()->check(CLI::ExistingFile);
    fs_cmd->add_option("--shots", fs_opts.shots)->delimiter(',')->capture_default_str();
    fs_cmd->add_option("--client", fs_client)->check(CLI::IsMember({"live", "mock"}))->capture_default_str();
    fs_cmd->add_option("--mock", fs_mock, "oracle, or a fixed answer such as B")->capture_default_str();
    fs_cmd->add_option("--repetitions", fs_opts.repetitions)->capture_default_str();
    fs_cmd->add_option("--per-level", per_level)->capture_default_str();
    fs_cmd->add_option("--seed", fs_opts.seed)->capture_default_str();
    fs_cmd->add_option("--token-budget", fs_opts.token_budget)->capture_default_str();
    fs_cmd->add_option("--out", fs_out, "per-call JSONL")->required();

    // report
    auto* rep_cmd = app.add_subcommand("report", "Shared-error overlap and dataset tables");
    std::vector<std::string> rep_compare, rep_names;
    std::string rep_split, rep_out;
    rep_cmd->add_option("--compare", rep_compare, "prediction JSONL files")->check(CLI::ExistingFile);
    rep_cmd->add_option("--names", rep_names)->delimiter(',');
    rep_cmd->add_option("--split", rep_split, "split JSONL for the class distribution table")->check(CLI::ExistingFile);
    rep_cmd->add_option("--out", rep_out, "text report")->required();

    std::vector<std::string> reversed = move_config_first(raw_args);
    std::reverse(reversed.begin(), reversed.end());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (ingest_cmd->parsed()) {
            Manifest manifest("ingest", ingest_cmd);
            const auto parts = split_list(ratios_text);
            if (parts.size() != 3) throw std::invalid_argument("--ratios needs three comma-separated values");
            const ingest::SplitRatios ratios{std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
            std::vector<ingest::RawEvidenceRecord> records;
            if (!fixture.empty()) {
                records = ingest::parse_evidence_json(slurp(fixture));
                manifest.input(fixture);
            } else {
                records = ingest::fetch_evidence(endpoint, page_size, {});
            }
            const auto kept = ingest::filter_records(records);
            const auto items = ingest::compile_multilabel(kept);
            const auto split = ingest::stratified_split(items, ratios, ingest_seed);
            write_file(ingest_out, [&](std::ostream& o) { ingest::write_split_jsonl(o, split); });
            const auto stats = with_suffix(ingest_out, ".stats.txt");
            const std::string table = dataset_stats_table(split);
            write_file(stats, [&](std::ostream& o) { o << table; });
            out << records.size() << " records, " << kept.size() << " after filtering, " << items.size() << " abstracts\n" << table;
            manifest.seed(ingest_seed);
            manifest.output(ingest_out);
            manifest.output(stats);
            manifest.finish(ingest_out);
        } else if (tok_train->parsed()) {
            Manifest manifest("tokenizer train", tok_train);
            const auto texts = load_corpus(tok_corpus);
            const auto vocab = tokenizer::train_vocab(texts, tok_size);
            write_file(tok_out, [&](std::ostream& o) { vocab.save(o); });
            out << "vocabulary size " << vocab.size() << "; " << tokenizer::count_long(vocab, texts) << " of " << texts.size()
                << " texts exceed 512 tokens\n";
            manifest.input(tok_corpus);
            manifest.output(tok_out);
            manifest.finish(tok_out);
        } else if (base_train->parsed()) {
            Manifest manifest("baseline train", base_train);
            const auto split = load_split(base_data);
            std::vector<std::string> texts;
            for (const auto& it : split.train) texts.push_back(it.abstract);
            const auto gold = gold_of(split.train);
            std::array<baseline::ClassTrainReport, kNumLevels> reports;
            baseline::OvrOptions opts;
            opts.reg = base_reg;
            const auto model = baseline::fit_baseline(texts, gold, opts, &reports);
            write_file(base_out, [&](std::ostream& o) { baseline::save_baseline(o, model); });
            out << model.tfidf.dimension() << " features\n";
            for (Level l : kAllLevels) {
                const auto& r = reports[index_of(l)];
                out << level_letter(l) << ": " << r.iterations << " iterations, gradient norm " << r.final_grad_norm
                    << (r.converged ? "" : " (not converged)") << '\n';
            }
            manifest.input(base_data);
            manifest.output(base_out);
            manifest.finish(base_out);
        } else if (base_eval->parsed()) {
            Manifest manifest("baseline eval", base_eval);
            const auto split = load_split(base_data);
            auto min = open_in(base_model);
            const auto model = baseline::load_baseline(min);
            const auto thresholds = eval::calibrate_thresholds(baseline_scores(model, split.validation), gold_of(split.validation));
            const auto scores = baseline_scores(model, split.test);
            const auto records = prediction_records(split.test, scores, thresholds);
            const auto preds = with_suffix(base_out, ".predictions.jsonl");
            write_file(preds, [&](std::ostream& o) { eval::write_predictions_jsonl(o, records); });
            const auto thr = with_suffix(base_out, ".thresholds.json");
            write_file(thr, [&](std::ostream& o) { eval::write_thresholds_json(o, thresholds); });
            manifest.input(base_data);
            manifest.input(base_model);
            manifest.output(preds);
            manifest.output(thr);
            write_metrics(base_out, {{"tf-idf logistic regression", metrics_of(records)}}, manifest, out);
            manifest.finish(base_out);
        } else if (pre_cmd->parsed()) {
            Manifest manifest("pretrain", pre_cmd);
            const auto vocab = load_vocab(pre_vocab);
            auto model = pre_init.empty() ? std::optional<neural::EncoderModel>{} : neural::load_checkpoint(fs::path(pre_init));
            if (!model) {
                pre_model.config.vocab_size = static_cast<int>(vocab.size());
                model = neural::init_model(pre_model.config, schedule.seed);
            }
            if (static_cast<std::size_t>(model->config.vocab_size) != vocab.size())
                throw DataError("checkpoint vocabulary size does not match " + pre_vocab);
            auto texts = load_corpus(pre_corpus);
            Rng rng(Rng::derive(schedule.seed, 0x4E1D));
            rng.shuffle(std::span<std::string>(texts));
            const auto held_n = static_cast<std::size_t>(heldout_fraction * static_cast<double>(texts.size()));
            std::vector<tokenizer::TokenSequence> train, held;
            for (std::size_t i = 0; i < texts.size(); ++i)
                (i < held_n ? held : train)
                    .push_back(tokenizer::encode(vocab, texts[i], static_cast<std::size_t>(model->config.context_width)));
            schedule.max_grad_norm = clip > 0.0 ? std::optional<double>(clip) : std::nullopt;
            if (!held.empty()) out << "held-out MLM loss before: " << training::heldout_mlm_loss(*model, held, {}, schedule.seed) << '\n';
            const auto result = training::pretrain_mlm(*model, train, schedule);
            if (!held.empty()) out << "held-out MLM loss after: " << training::heldout_mlm_loss(*model, held, {}, schedule.seed) << '\n';
            neural::save_checkpoint(fs::path(pre_out), *model);
            const auto trace = with_suffix(pre_out, ".loss.csv");
            write_file(trace, [&](std::ostream& o) {
                o << "step,loss\n";
                for (std::size_t i = 0; i < result.loss_trace.size(); ++i) o << i << ',' << std::setprecision(10) << result.loss_trace[i] << '\n';
            });
            manifest.seed(schedule.seed);
            manifest.input(pre_corpus);
            manifest.input(pre_vocab);
            if (!pre_init.empty()) manifest.input(pre_init);
            manifest.output(pre_out);
            manifest.output(trace);
            manifest.finish(pre_out);
        } else if (ext_cmd->parsed()) {
            Manifest manifest("extend-context", ext_cmd);
            const auto model = neural::load_checkpoint(fs::path(ext_in));
            if (factor < 1) throw std::invalid_argument("--factor must be >= 1");
            const auto extended = training::extend_context(model, model.config.context_width * factor);
            neural::save_checkpoint(fs::path(ext_out), extended);
            out << "context width " << model.config.context_width << " -> " << extended.config.context_width << '\n';
            manifest.input(ext_in);
            manifest.output(ext_out);
            manifest.finish(ext_out);
        } else if (ft_cmd->parsed() || grid_cmd->parsed()) {
            const bool search_only = grid_cmd->parsed();
            Manifest manifest(search_only ? "grid-search" : "finetune", search_only ? grid_cmd : ft_cmd);
            const auto vocab = load_vocab(ft_vocab);
            std::optional<neural::EncoderModel> init;
            if (!ft_init.empty()) init = neural::load_checkpoint(fs::path(ft_init));
            neural::ModelConfig config = init ? init->config : ft_model.config;
            if (!init) config.vocab_size = static_cast<int>(vocab.size());
            if (static_cast<std::size_t>(config.vocab_size) != vocab.size()) throw DataError("checkpoint vocabulary size does not match " + ft_vocab);
            const auto split = load_split(ft_data);
            const auto encoded = training::encode_split(vocab, split, static_cast<std::size_t>(config.context_width));
            const auto factory = factory_for(init, config);
            manifest.input(ft_data);
            manifest.input(ft_vocab);
            if (!ft_init.empty()) manifest.input(ft_init);
            for (auto s : ft_seeds) manifest.seed(s);

            if (search_only || ft_grid) {
                grid.epochs = ft_epochs;
                grid.seeds = ft_seeds;
                const auto g = training::hyperparam_search(factory, encoded, grid);
                out << training::format_grid_table(g);
                const fs::path table = search_only ? fs::path(ft_out) : with_suffix(ft_out, ".grid.txt");
                write_grid(table, g, manifest);
                ft_lr = g.cells[g.best].learning_rate;
                ft_batch = g.cells[g.best].batch_size;
                if (search_only) {
                    manifest.finish(ft_out);
                    return kOk;
                }
            }
            const auto runs = training::multi_seed_run(factory, encoded, ft_lr, ft_batch, ft_epochs, ft_seeds);
            for (std::size_t k = 0; k < runs.size(); ++k) {
                const fs::path ckpt = runs.size() == 1 ? fs::path(ft_out) : with_suffix(ft_out, "_seed" + std::to_string(ft_seeds[k]) + ".ckpt");
                neural::save_checkpoint(ckpt, runs[k].best);
                const auto trace = with_suffix(ckpt, ".trace.csv");
                write_trace(trace, runs[k]);
                out << "seed " << ft_seeds[k] << ": best epoch " << runs[k].best_epoch << ", validation loss " << runs[k].best_validation_loss
                    << '\n';
                manifest.output(ckpt);
                manifest.output(trace);
            }
            manifest.finish(ft_out);
        } else if (cal_cmd->parsed()) {
            Manifest manifest("calibrate", cal_cmd);
            const auto split = load_split(cal_data);
            std::vector<eval::Scores> scores;
            if (!cal_baseline.empty()) {
                auto in = open_in(cal_baseline);
                scores = baseline_scores(baseline::load_baseline(in), split.validation);
                manifest.input(cal_baseline);
            } else if (!cal_ckpt.empty() && !cal_vocab.empty()) {
                const auto model = neural::load_checkpoint(fs::path(cal_ckpt));
                const auto encoded = training::encode_split(load_vocab(cal_vocab), split, static_cast<std::size_t>(model.config.context_width));
                scores = training::predict_probabilities(model, encoded.validation);
                manifest.input(cal_ckpt);
                manifest.input(cal_vocab);
            } else {
                throw std::invalid_argument("calibrate needs --baseline or --ckpt with --vocab");
            }
            const auto thresholds = eval::calibrate_thresholds(scores, gold_of(split.validation));
            write_file(cal_out, [&](std::ostream& o) { eval::write_thresholds_json(o, thresholds); });
            eval::write_thresholds_json(out, thresholds);
            manifest.input(cal_data);
            manifest.output(cal_out);
            manifest.finish(cal_out);
        } else if (ev_cmd->parsed()) {
            Manifest manifest("evaluate", ev_cmd);
            std::vector<eval::NamedReport> rows;
            if (!ev_predictions.empty()) {
                for (const auto& p : ev_predictions) {
                    auto in = open_in(p);
                    rows.push_back({fs::path(p).stem().string(), metrics_of(eval::read_predictions_jsonl(in))});
                    manifest.input(p);
                }
            } else {
                if (ev_data.empty()) throw std::invalid_argument("evaluate needs --predictions, or --data with --ckpt/--baseline");
                const auto split = load_split(ev_data);
                manifest.input(ev_data);
                std::optional<eval::ThresholdSet> fixed;
                if (!ev_thresholds.empty()) {
                    auto in = open_in(ev_thresholds);
                    fixed = eval::read_thresholds_json(in);
                    manifest.input(ev_thresholds);
                }
                const auto emit = [&](const std::string& name, const std::vector<eval::Scores>& val, const std::vector<eval::Scores>& test,
                                      const std::string& suffix) {
                    const auto thresholds = fixed ? *fixed : eval::calibrate_thresholds(val, gold_of(split.validation));
                    const auto records = prediction_records(split.test, test, thresholds);
                    const auto preds = with_suffix(ev_out, suffix + ".predictions.jsonl");
                    write_file(preds, [&](std::ostream& o) { eval::write_predictions_jsonl(o, records); });
                    manifest.output(preds);
                    rows.push_back({name, metrics_of(records)});
                };
                if (!ev_baseline.empty()) {
                    auto in = open_in(ev_baseline);
                    const auto model = baseline::load_baseline(in);
                    manifest.input(ev_baseline);
                    emit("tf-idf logistic regression", baseline_scores(model, split.validation), baseline_scores(model, split.test), ".baseline");
                }
                if (!ev_ckpts.empty()) {
                    if (ev_vocab.empty()) throw std::invalid_argument("--ckpt needs --vocab");
                    const auto vocab = load_vocab(ev_vocab);
                    manifest.input(ev_vocab);
                    for (std::size_t k = 0; k < ev_ckpts.size(); ++k) {
                        const auto model = neural::load_checkpoint(fs::path(ev_ckpts[k]));
                        const auto encoded = training::encode_split(vocab, split, static_cast<std::size_t>(model.config.context_width));
                        manifest.input(ev_ckpts[k]);
                        emit(fs::path(ev_ckpts[k]).stem().string(), training::predict_probabilities(model, encoded.validation),
                             training::predict_probabilities(model, encoded.test), "." + std::to_string(k));
                    }
                }
                if (rows.empty()) throw std::invalid_argument("evaluate needs --ckpt or --baseline with --data");
            }
            write_metrics(ev_out, rows, manifest, out);
            manifest.finish(ev_out);
        } else if (ex_cmd->parsed()) {
            Manifest manifest("explain", ex_cmd);
            const auto model = neural::load_checkpoint(fs::path(ex_ckpt));
            const auto vocab = load_vocab(ex_vocab);
            const auto split = load_split(ex_data);
            const auto only = level_option(ex_class);
            attribution::AttributionConfig cfg;
            cfg.baseline = ex_baseline == "zero" ? attribution::BaselineKind::ZeroEmbedding : attribution::BaselineKind::PadSequence;
            cfg.steps = ex_steps;
            attribution::TopTokens top;
            std::ostringstream jsonl;
            for (Level level : kAllLevels) {
                if (only && *only != level) continue;
                std::vector<std::size_t> members;
                for (std::size_t i = 0; i < split.test.size(); ++i)
                    if (split.test[i].labels.test(level)) members.push_back(i);
                Rng rng(Rng::derive(ex_seed, index_of(level)));
                rng.shuffle(std::span<std::size_t>(members));
                if (members.size() > ex_items) members.resize(ex_items);
                cfg.target = level;
                std::map<std::string, double> totals;
                for (std::size_t i : members) {
                    const auto& item = split.test[i];
                    const auto seq = tokenizer::encode(vocab, item.abstract, static_cast<std::size_t>(model.config.context_width));
                    const auto ig = attribution::integrated_gradients(model, seq, cfg);
                    std::vector<std::string> texts;
                    for (std::size_t p = 0; p < static_cast<std::size_t>(ig.attributions.rows()); ++p) texts.push_back(vocab.token(seq.ids[p]));
                    const auto toks = attribution::token_attributions(ig, texts);
                    json tokens = json::array();
                    for (const auto& t : toks.tokens) {
                        tokens.push_back({{"token", t.token}, {"position", t.position}, {"score", t.score}});
                        if (!vocab.is_special(seq.ids[t.position])) totals[t.token] += t.score;
                    }
                    jsonl << json{{"item", std::to_string(item.pubmed_id)},
                                  {"class", std::string(1, level_letter(level))},
                                  {"residual", toks.residual},
                                  {"tokens", tokens}}
                                 .dump()
                          << '\n';
                }
                top[index_of(level)] = attribution::rank_totals(totals, ex_k);
            }
            write_file(ex_out, [&](std::ostream& o) { o << jsonl.str(); });
            const auto table = with_suffix(ex_out, ".txt");
            write_file(table, [&](std::ostream& o) { attribution::write_top_tokens_table(o, top); });
            attribution::write_top_tokens_table(out, top);
            manifest.seed(ex_seed);
            manifest.input(ex_ckpt);
            manifest.input(ex_vocab);
            manifest.input(ex_data);
            manifest.output(ex_out);
            manifest.output(table);
            manifest.finish(ex_out);
        } else if (fs_cmd->parsed()) {
            Manifest manifest("fewshot", fs_cmd);
            const auto split = load_split(fs_data);
            const auto reduced = fewshot::reduce_test_set(split.test, per_level, fs_opts.seed);
            std::unique_ptr<fewshot::LlmClient> client;
            if (fs_client == "live") client = std::make_unique<fewshot::HttpChatClient>(fewshot::LiveClientConfig::from_env());
            else if (fs_mock == "oracle") client = fewshot::oracle_client(reduced);
            else client = fewshot::constant_client(fs_mock);
            const auto results = fewshot::evaluate_fewshot(*client, split.train, reduced, fs_opts);
            std::vector<eval::NamedReport> rows;
            write_file(fs_out, [&](std::ostream& o) {
                for (const auto& sr : results) {
                    for (const auto& rr : sr.repetitions) {
                        if (rr.failed) {
                            o << json{{"shots", sr.shots}, {"repetition", rr.repetition}, {"failed", true}, {"error", rr.error}}.dump() << '\n';
                            continue;
                        }
                        for (std::size_t i = 0; i < rr.predictions.size(); ++i) {
                            const auto& p = rr.predictions[i];
                            o << json{{"shots", sr.shots},
                                      {"repetition", rr.repetition},
                                      {"item", std::to_string(reduced[i].pubmed_id)},
                                      {"gold", reduced[i].labels.to_string()},
                                      {"predicted", p.predicted.to_string()},
                                      {"parseable", p.parseable},
                                      {"response", p.raw_response}}
                                         .dump()
                              << '\n';
                        }
                    }
                    rows.push_back({std::to_string(sr.shots) + "-shot", sr.mean});
                }
            });
            manifest.seed(fs_opts.seed);
            manifest.input(fs_data);
            manifest.output(fs_out);
            const auto csv = with_suffix(fs_out, ".metrics.csv");
            write_file(csv, [&](std::ostream& o) { eval::write_metrics_csv(o, rows); });
            const auto txt = with_suffix(fs_out, ".metrics.txt");
            write_file(txt, [&](std::ostream& o) { eval::write_metrics_table(o, rows); });
            eval::write_metrics_table(out, rows);
            manifest.output(csv);
            manifest.output(txt);
            manifest.finish(fs_out);
        } else if (rep_cmd->parsed()) {
            Manifest manifest("report", rep_cmd);
            if (rep_compare.empty() && rep_split.empty()) throw std::invalid_argument("report needs --compare or --split");
            std::ostringstream text;
            if (!rep_split.empty()) {
                text << dataset_stats_table(load_split(rep_split)) << '\n';
                manifest.input(rep_split);
            }
            if (!rep_compare.empty()) {
                if (rep_compare.size() < 2) throw std::invalid_argument("--compare needs at least two prediction files");
                std::vector<std::vector<LabelVector>> preds;
                std::vector<LabelVector> gold;
                std::vector<std::string> ids;
                std::vector<std::string> names = rep_names;
                for (std::size_t k = 0; k < rep_compare.size(); ++k) {
                    auto in = open_in(rep_compare[k]);
                    const auto records = eval::read_predictions_jsonl(in);
                    std::vector<LabelVector> p;
                    std::vector<std::string> these_ids;
                    for (const auto& r : records) {
                        p.push_back(r.predicted);
                        these_ids.push_back(r.id);
                    }
                    if (k == 0) {
                        ids = these_ids;
                        for (const auto& r : records) gold.push_back(r.gold);
                    } else if (these_ids != ids) {
                        throw DataError(rep_compare[k] + " covers different items than " + rep_compare[0]);
                    }
                    preds.push_back(std::move(p));
                    if (names.size() <= k) names.push_back(fs::path(rep_compare[k]).stem().string());
                    manifest.input(rep_compare[k]);
                }
                const auto analysis = eval::misclassification_analysis(preds, gold);
                eval::write_overlap_table(text, names, analysis);
                const auto csv = with_suffix(rep_out, ".overlap.csv");
                write_file(csv, [&](std::ostream& o) { eval::write_overlap_csv(o, names, analysis); });
                manifest.output(csv);
            }
            write_file(rep_out, [&](std::ostream& o) { o << text.str(); });
            out << text.str();
            manifest.output(rep_out);
            manifest.finish(rep_out);
        }
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kNumericError;
    } catch (const std::invalid_argument& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        err << "data error: " << e.what() << '\n';
        return kDataError;
    }
    return kOk;
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, out, err);
}

}  // namespace civic::cli
