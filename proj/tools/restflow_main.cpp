// Command-line front end: data synthesis, training, generation, evaluation
// and gradient self-checks. Exit codes: 0 success, 1 usage/config error,
// 2 numerical abort, 3 gradcheck failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "restflow/data.hpp"
#include "restflow/flow.hpp"
#include "restflow/gradcheck.hpp"
#include "restflow/io.hpp"
#include "restflow/metrics.hpp"
#include "restflow/model.hpp"

namespace fs = std::filesystem;
using namespace restflow;

namespace {

constexpr std::uint64_t kSampleStream = 3;

int cmd_synth_data(const std::string& spec_path, const std::string& out_dir,
                   std::uint64_t seed) {
    data::SynthSpec spec = data::load_synth_spec(spec_path);
    std::vector<data::SubjectPair> pairs = data::gen_dataset(spec, seed);
    data::write_dataset(pairs, out_dir);
    std::cout << "wrote " << pairs.size() << " subjects to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_path, long epochs_override,
              std::string losses_path) {
    io::RunConfig cfg = io::load_config(config_path);
    if (epochs_override >= 0) cfg.epochs = static_cast<std::size_t>(epochs_override);

    std::vector<data::SubjectPair> all = data::load_dataset(data_dir);
    std::vector<std::string> ids;
    for (const auto& p : all) ids.push_back(p.subject_id);
    io::SplitResult split =
        io::split_subjects(ids, {cfg.train_frac, cfg.val_frac, cfg.test_frac}, cfg.seed);
    std::sort(split.train.begin(), split.train.end());

    std::vector<TrainingExample> items;
    std::map<std::string, int> vocab;
    for (const auto& p : all) {
        if (std::find(split.train.begin(), split.train.end(), p.subject_id) == split.train.end())
            continue;
        items.push_back(TrainingExample{p.subject_id, p.rest, p.task, p.schedule});
        if (vocab.empty()) vocab = p.schedule.vocab;
    }
    if (items.empty()) throw ValidationError("train: training split is empty");
    if (vocab.empty()) vocab["__none__"] = 0;  // event-free cohort

    Model model = build_model(cfg, items[0].task.v(), items[0].task.t_len(), vocab);
    std::cout << "training on " << items.size() << " subjects (" << model.params.scalar_count()
              << " parameters), " << cfg.epochs << " epochs\n";
    std::vector<LossBreakdown> history = train(model, items, &std::cout);
    save_checkpoint(out_path, model, history);

    if (losses_path.empty()) losses_path = out_path + ".losses.csv";
    std::ofstream csv(losses_path);
    if (!csv) throw Error("train: cannot write " + losses_path);
    csv << std::setprecision(17) << "epoch,fm,fc,psd,total\n";
    for (std::size_t i = 0; i < history.size(); ++i)
        csv << (i + 1) << "," << history[i].fm << "," << history[i].fc << "," << history[i].psd
            << "," << history[i].total << "\n";

    std::cout << "checkpoint: " << out_path << "\nlosses: " << losses_path << "\n";
    return 0;
}

int cmd_generate(const std::string& ckpt_path, const std::string& rest_path,
                 const std::string& events_dir, long steps, std::uint64_t seed,
                 const std::string& out_path) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    io::TimeSeries rest = io::load_timeseries(rest_path);

    io::EventSchedule schedule;
    schedule.tr = rest.tr;
    schedule.vocab = ckpt.model.vocab;
    if (!events_dir.empty()) {
        std::vector<fs::path> files;
        for (const auto& f : fs::directory_iterator(events_dir))
            if (f.path().extension() == ".ev") files.push_back(f.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            std::string condition = f.stem().string();
            if (!ckpt.model.vocab.count(condition))
                throw ValidationError("generate: condition '" + condition +
                                      "' is not in the checkpoint vocabulary");
            auto events = io::parse_event_file(io::read_file(f), condition);
            schedule.events.insert(schedule.events.end(), events.begin(), events.end());
        }
    }

    std::size_t n_steps = steps > 0 ? static_cast<std::size_t>(steps)
                                    : ckpt.model.cfg.euler_steps;
    Rng rng = Rng(seed).derive(kSampleStream);
    io::TimeSeries out = sample(ckpt.model, rest, schedule, n_steps, rng);
    io::save_timeseries(out, out_path);
    std::cout << "wrote " << shape_str(out.data) << " series to " << out_path << "\n";
    return 0;
}

// subjects in a directory: either <dir>/<sub>/task.ts or flat <dir>/<sub>.ts
std::map<std::string, fs::path> scan_series_dir(const fs::path& dir) {
    std::map<std::string, fs::path> out;
    if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory()) {
            fs::path ts = entry.path() / "task.ts";
            if (fs::exists(ts)) out[entry.path().filename().string()] = ts;
        } else if (entry.path().extension() == ".ts") {
            out[entry.path().stem().string()] = entry.path();
        }
    }
    return out;
}

int cmd_evaluate(const std::string& real_dir, const std::string& gen_dir,
                 const std::string& config_path, const std::string& out_path,
                 const std::string& task_label) {
    io::RunConfig cfg = io::load_config(config_path);
    auto real = scan_series_dir(real_dir);
    auto gen = scan_series_dir(gen_dir);

    std::vector<metrics::EvalPair> pairs;
    for (const auto& [subject, real_path] : real) {
        auto it = gen.find(subject);
        if (it == gen.end()) {
            std::cerr << "warning: subject " << subject << " has no generated series, skipped\n";
            continue;
        }
        pairs.push_back(
            {subject, io::load_timeseries(real_path), io::load_timeseries(it->second)});
    }
    for (const auto& [subject, path] : gen)
        if (!real.count(subject))
            std::cerr << "warning: generated subject " << subject << " has no real series, skipped\n";
    if (pairs.empty()) throw ValidationError("evaluate: no paired subjects between directories");

    metrics::MetricReport report = metrics::evaluate(pairs, cfg.band);
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";

    std::string csv = metrics::report_csv_header() + "\n" +
                      metrics::report_csv_row(task_label, report) + "\n";
    std::ofstream os(out_path);
    if (!os) throw Error("evaluate: cannot write " + out_path);
    os << csv;
    std::cout << csv;
    return 0;
}

int cmd_gradcheck(const std::string& config_path, std::uint64_t seed) {
    io::RunConfig cfg = config_path.empty() ? io::RunConfig{} : io::load_config(config_path);
    GradCheckReport report = gradcheck_pipeline(cfg.lambda_fc, cfg.lambda_psd, seed);
    for (const auto& g : report.groups)
        std::cout << g.name << " max_rel_err=" << g.max_rel_err << "\n";
    std::cout << "max relative error: " << report.max_rel_err << " (threshold "
              << report.threshold << ")\n";
    if (!report.pass) {
        std::cerr << "gradcheck FAILED at parameter " << report.worst_param << "\n";
        return 3;
    }
    std::cout << "gradcheck passed\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"restflow: event-conditioned flow matching for rest-to-task time-series synthesis"};
    app.require_subcommand(1);

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "generate a synthetic paired dataset");
    std::string synth_spec, synth_out;
    std::uint64_t synth_seed = 0;
    synth->add_option("--spec", synth_spec, "synth spec file (key = value)")->required();
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->add_option("--seed", synth_seed, "noise/schedule seed");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model on a dataset directory");
    std::string train_data, train_config, train_out, train_losses;
    long train_epochs = -1;
    train_cmd->add_option("--data", train_data, "dataset directory")->required();
    train_cmd->add_option("--config", train_config, "run config file")->required();
    train_cmd->add_option("--out", train_out, "checkpoint output path")->required();
    train_cmd->add_option("--epochs", train_epochs, "override config epochs");
    train_cmd->add_option("--losses", train_losses, "loss CSV path (default <out>.losses.csv)");

    // generate
    auto* gen_cmd = app.add_subcommand("generate", "synthesize a task series from rest + events");
    std::string gen_ckpt, gen_rest, gen_events, gen_out;
    long gen_steps = 0;
    std::uint64_t gen_seed = 0;
    gen_cmd->add_option("--ckpt", gen_ckpt, "checkpoint path")->required();
    gen_cmd->add_option("--rest", gen_rest, "resting-state series file")->required();
    gen_cmd->add_option("--events", gen_events, "directory of <condition>.ev files");
    gen_cmd->add_option("--steps", gen_steps, "Euler steps (default: from checkpoint config)");
    gen_cmd->add_option("--seed", gen_seed, "sampling seed");
    gen_cmd->add_option("--out", gen_out, "output series file")->required();

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "compare generated and real series");
    std::string eval_real, eval_gen, eval_config, eval_out, eval_task = "all";
    eval_cmd->add_option("--real", eval_real, "directory of real series")->required();
    eval_cmd->add_option("--gen", eval_gen, "directory of generated series")->required();
    eval_cmd->add_option("--config", eval_config, "run config file (band settings)")->required();
    eval_cmd->add_option("--out", eval_out, "metric CSV output path")->required();
    eval_cmd->add_option("--task", eval_task, "task label for the CSV row");

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of all gradients");
    std::string grad_config;
    std::uint64_t grad_seed = 0;
    grad_cmd->add_option("--config", grad_config, "run config file (loss weights)");
    grad_cmd->add_option("--seed", grad_seed, "micro-model seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors exit 1, --help exits 0
    }

    try {
        if (synth->parsed()) return cmd_synth_data(synth_spec, synth_out, synth_seed);
        if (train_cmd->parsed())
            return cmd_train(train_data, train_config, train_out, train_epochs, train_losses);
        if (gen_cmd->parsed())
            return cmd_generate(gen_ckpt, gen_rest, gen_events, gen_steps, gen_seed, gen_out);
        if (eval_cmd->parsed())
            return cmd_evaluate(eval_real, eval_gen, eval_config, eval_out, eval_task);
        if (grad_cmd->parsed()) return cmd_gradcheck(grad_config, grad_seed);
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
