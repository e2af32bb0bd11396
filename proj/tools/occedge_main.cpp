// occedge command-line tool. Subcommands: synth, label-gen, extract, train,
// eval, infer. Built entirely on the public C API; every successful run
// writes its resolved configuration as JSON next to its outputs.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric error.
#include "occedge.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_code_for(oe_status s) {
    switch (s) {
        case OE_OK:
            return 0;
        case OE_ERR_INVALID_ARGUMENT:
            return 1;
        case OE_ERR_DATA:
        case OE_ERR_FORMAT:
        case OE_ERR_SHAPE:
            return 2;
        case OE_ERR_NUMERIC:
        case OE_ERR_INTERNAL:
        default:
            return 3;
    }
}

[[nodiscard]] int fail(oe_status s) {
    std::cerr << "error: " << oe_last_error() << "\n";
    return exit_code_for(s);
}

void write_run_config(const fs::path& where, const std::string& command, const json& resolved) {
    json j;
    j["command"] = command;
    j["config"] = resolved;
    std::ofstream f(where);
    if (f) {
        f << j.dump(2) << "\n";
    }
}

struct Handles {
    // RAII for the C handles used by a single command
    oe_patchset* patches = nullptr;
    oe_model* model = nullptr;
    ~Handles() {
        oe_patchset_close(patches);
        oe_model_close(model);
    }
};

int default_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"occlusion-edge detection pipeline (patch CNN over RGB-D frames)"};
    app.set_config("--config", "", "read defaults from a key=value config file");
    app.require_subcommand(1);
    app.fallthrough();  // global flags (--threads, --deterministic) after the subcommand
    app.set_version_flag("--version", std::string(oe_version()));

    int threads = default_threads();
    bool deterministic = false;
    app.add_option("--threads", threads, "worker threads (default: hardware)")
        ->check(CLI::PositiveNumber);
    app.add_flag("--deterministic", deterministic,
                 "single-threaded execution for bit-reproducible runs");

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "render a synthetic RGB-D dataset from a scene spec");
    std::string synth_spec, synth_out;
    synth->add_option("spec", synth_spec, "scene spec (json)")->required();
    synth->add_option("out_dir", synth_out, "output dataset directory")->required();

    // ---- label-gen ----
    auto* labelgen = app.add_subcommand("label-gen", "write depth-threshold label images");
    std::string lg_dataset, lg_out;
    double lg_tau = 0.10;
    labelgen->add_option("dataset_dir", lg_dataset, "TUM-layout dataset directory")->required();
    labelgen->add_option("out_dir", lg_out, "output directory for label PNGs")->required();
    labelgen->add_option("--tau-depth", lg_tau, "depth discontinuity threshold, meters");

    // ---- extract ----
    auto* extract = app.add_subcommand("extract", "extract labeled 32x32 patches into a cache");
    std::string ex_dataset, ex_cache;
    std::string ex_channels = "rgbd";
    oe_extract_params ex_params;
    oe_extract_params_init(&ex_params);
    bool ex_balance = false;
    extract->add_option("dataset_dir", ex_dataset, "TUM-layout dataset directory")->required();
    extract->add_option("cache", ex_cache, "output patch cache file")->required();
    extract->add_option("--channels", ex_channels, "rgbd (4 channels) or rgb (3)")
        ->check(CLI::IsMember({"rgb", "rgbd"}));
    extract->add_option("--stride", ex_params.stride, "extraction grid stride");
    extract->add_option("--tau-depth", ex_params.tau_depth, "depth discontinuity threshold");
    extract->add_option("--max-invalid-fraction", ex_params.max_invalid_fraction,
                        "patch pre-filter threshold");
    extract->add_option("--train-fraction", ex_params.train_fraction, "contiguous time split");
    extract->add_flag("--balance", ex_balance, "subsample training negatives");
    extract->add_option("--balance-ratio", ex_params.balance_ratio,
                        "kept negatives per positive (with --balance)");
    extract->add_option("--seed", ex_params.seed, "subsampling seed");

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train a model on a patch cache");
    std::string tr_cache, tr_model, tr_csv;
    oe_train_params tr_params;
    oe_train_params_init(&tr_params);
    bool tr_no_l2_output = false;
    train_cmd->add_option("cache", tr_cache, "patch cache file")->required();
    train_cmd->add_option("model", tr_model, "output model file")->required();
    train_cmd->add_option("--epochs", tr_params.epochs, "training epochs");
    train_cmd->add_option("--batch-size", tr_params.batch_size, "mini-batch size");
    train_cmd->add_option("--lr", tr_params.learning_rate, "learning rate");
    train_cmd->add_option("--momentum", tr_params.momentum, "momentum");
    train_cmd->add_option("--l2", tr_params.l2, "L2 regularizer weight");
    train_cmd->add_flag("--no-l2-on-output", tr_no_l2_output,
                        "restrict the L2 regularizer to conv layers");
    train_cmd->add_option("--seed", tr_params.seed, "init + shuffle seed");
    train_cmd->add_option("--eval-max-patches", tr_params.eval_max_patches,
                          "per-epoch error subsample cap (0 = full split)");
    train_cmd->add_option("--checkpoint-every", tr_params.checkpoint_every,
                          "save a checkpoint every N epochs (0 = off)");
    train_cmd->add_option("--epoch-csv", tr_csv, "epoch record CSV (default <model>.epochs.csv)");

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "patch-level error report for a model");
    std::string ev_model, ev_cache, ev_report, ev_csv;
    std::string ev_split = "test";
    eval_cmd->add_option("model", ev_model, "model file")->required();
    eval_cmd->add_option("cache", ev_cache, "patch cache file")->required();
    eval_cmd->add_option("--split", ev_split, "test, train or all")
        ->check(CLI::IsMember({"test", "train", "all"}));
    eval_cmd->add_option("--report", ev_report, "plain-text report path (default stdout only)");
    eval_cmd->add_option("--csv", ev_csv, "machine-readable CSV path");

    // ---- infer ----
    auto* infer_cmd = app.add_subcommand("infer", "full-frame heatmaps via sweep + fusion");
    std::string in_model, in_dataset, in_out = ".";
    std::vector<int> in_strides{8};
    int in_frame = 0;
    double in_fwhm = 8.0;
    double in_mask_threshold = 0.0;
    bool in_raw_fusion = false;
    infer_cmd->add_option("model", in_model, "model file")->required();
    infer_cmd->add_option("dataset_dir", in_dataset, "TUM-layout dataset directory")->required();
    infer_cmd->add_option("--frame", in_frame, "frame index within the sequence");
    infer_cmd->add_option("--stride", in_strides, "sweep stride(s); repeatable");
    infer_cmd->add_option("--fwhm", in_fwhm, "Gaussian kernel FWHM, pixels");
    infer_cmd->add_option("--out-dir", in_out, "output directory");
    infer_cmd->add_option("--mask-threshold", in_mask_threshold,
                          "also write a binary mask at this threshold (0 = off)");
    infer_cmd->add_flag("--raw-fusion", in_raw_fusion,
                        "accumulate raw kernel sums instead of the weighted mean");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;  // usage / config error
    }

    if (deterministic) {
        threads = 1;
    }

    Handles h;

    if (*synth) {
        if (oe_status s = oe_synth_generate(synth_spec.c_str(), synth_out.c_str()); s != OE_OK) {
            return fail(s);
        }
        write_run_config(fs::path(synth_out) / "run_config.json", "synth",
                         {{"spec", synth_spec}, {"out_dir", synth_out}});
        std::cout << "synthetic dataset written to " << synth_out << "\n";
        return 0;
    }

    if (*labelgen) {
        if (oe_status s = oe_label_gen(lg_dataset.c_str(), lg_out.c_str(), lg_tau); s != OE_OK) {
            return fail(s);
        }
        write_run_config(fs::path(lg_out) / "run_config.json", "label-gen",
                         {{"dataset_dir", lg_dataset}, {"out_dir", lg_out}, {"tau_depth", lg_tau}});
        std::cout << "label images written to " << lg_out << "\n";
        return 0;
    }

    if (*extract) {
        ex_params.channels = ex_channels == "rgbd" ? 4 : 3;
        ex_params.balance = ex_balance ? 1 : 0;
        ex_params.threads = threads;
        if (oe_status s = oe_patchset_extract(ex_dataset.c_str(), &ex_params, &h.patches);
            s != OE_OK) {
            return fail(s);
        }
        if (oe_status s = oe_patchset_save(h.patches, ex_cache.c_str()); s != OE_OK) {
            return fail(s);
        }
        int train_count = 0, test_count = 0, channels = 0;
        oe_patchset_counts(h.patches, &train_count, &test_count, &channels);
        write_run_config(fs::path(ex_cache).replace_extension(".run.json"), "extract",
                         {{"dataset_dir", ex_dataset},
                          {"cache", ex_cache},
                          {"channels", ex_channels},
                          {"stride", ex_params.stride},
                          {"tau_depth", ex_params.tau_depth},
                          {"max_invalid_fraction", ex_params.max_invalid_fraction},
                          {"train_fraction", ex_params.train_fraction},
                          {"balance", ex_balance},
                          {"balance_ratio", ex_params.balance_ratio},
                          {"seed", ex_params.seed}});
        std::cout << "extracted " << train_count << " train / " << test_count
                  << " test patches (" << channels << " channels) -> " << ex_cache << "\n";
        return 0;
    }

    if (*train_cmd) {
        if (oe_status s = oe_patchset_open(tr_cache.c_str(), &h.patches); s != OE_OK) {
            return fail(s);
        }
        int train_count = 0, test_count = 0, channels = 0;
        oe_patchset_counts(h.patches, &train_count, &test_count, &channels);
        if (oe_status s = oe_model_init(channels, tr_params.seed, &h.model); s != OE_OK) {
            return fail(s);
        }
        tr_params.l2_on_output = tr_no_l2_output ? 0 : 1;
        tr_params.threads = threads;
        const std::string csv = tr_csv.empty() ? tr_model + ".epochs.csv" : tr_csv;
        if (oe_status s = oe_model_train(h.model, h.patches, &tr_params, csv.c_str(),
                                         tr_params.checkpoint_every > 0 ? tr_model.c_str() : nullptr);
            s != OE_OK) {
            return fail(s);
        }
        if (oe_status s = oe_model_save(h.model, tr_model.c_str()); s != OE_OK) {
            return fail(s);
        }
        write_run_config(fs::path(tr_model).replace_extension(".run.json"), "train",
                         {{"cache", tr_cache},
                          {"model", tr_model},
                          {"epochs", tr_params.epochs},
                          {"batch_size", tr_params.batch_size},
                          {"lr", tr_params.learning_rate},
                          {"momentum", tr_params.momentum},
                          {"l2", tr_params.l2},
                          {"l2_on_output", tr_params.l2_on_output != 0},
                          {"seed", tr_params.seed},
                          {"eval_max_patches", tr_params.eval_max_patches},
                          {"checkpoint_every", tr_params.checkpoint_every},
                          {"epoch_csv", csv},
                          {"deterministic", deterministic},
                          {"channels", channels}});
        std::cout << "trained " << tr_params.epochs << " epochs on " << train_count
                  << " patches -> " << tr_model << "\n";
        return 0;
    }

    if (*eval_cmd) {
        if (oe_status s = oe_model_open(ev_model.c_str(), &h.model); s != OE_OK) {
            return fail(s);
        }
        if (oe_status s = oe_patchset_open(ev_cache.c_str(), &h.patches); s != OE_OK) {
            return fail(s);
        }
        const int split = ev_split == "test" ? 0 : ev_split == "train" ? 1 : 2;
        oe_eval_result r;
        if (oe_status s = oe_model_evaluate(h.model, h.patches, split, threads, &r); s != OE_OK) {
            return fail(s);
        }
        const auto pct = [](double v) {
            if (v < 0.0) {
                return std::string("n/a");
            }
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.2f%%", v * 100.0);
            return std::string(buf);
        };
        const std::string channels = oe_model_channels(h.model) == 4 ? "RGB-D" : "RGB";
        std::string table = "Channels   Overall error   False alarm   Missed detection\n";
        char line[160];
        std::snprintf(line, sizeof(line), "%-10s %-15s %-13s %-18s\n", channels.c_str(),
                      pct(r.overall_error).c_str(), pct(r.false_alarm).c_str(),
                      pct(r.missed_detection).c_str());
        table += line;
        std::cout << table;
        if (!ev_report.empty()) {
            std::ofstream f(ev_report);
            f << table;
        }
        if (!ev_csv.empty()) {
            std::ofstream f(ev_csv);
            f << "channels,overall_error,false_alarm,missed_detection,tp,fp,tn,fn\n";
            f << channels << "," << (r.overall_error < 0 ? "" : std::to_string(r.overall_error))
              << "," << (r.false_alarm < 0 ? "" : std::to_string(r.false_alarm)) << ","
              << (r.missed_detection < 0 ? "" : std::to_string(r.missed_detection)) << "," << r.tp
              << "," << r.fp << "," << r.tn << "," << r.fn << "\n";
        }
        const fs::path cfg_path =
            ev_report.empty() ? fs::path(ev_cache).replace_extension(".eval.run.json")
                              : fs::path(ev_report).replace_extension(".run.json");
        write_run_config(cfg_path, "eval",
                         {{"model", ev_model},
                          {"cache", ev_cache},
                          {"split", ev_split},
                          {"report", ev_report},
                          {"csv", ev_csv}});
        return 0;
    }

    if (*infer_cmd) {
        if (oe_status s = oe_model_open(in_model.c_str(), &h.model); s != OE_OK) {
            return fail(s);
        }
        fs::create_directories(in_out);
        const std::string sidecar = (fs::path(in_out) / "infer.jsonl").string();
        std::ofstream side(sidecar, std::ios::app);
        for (const int stride : in_strides) {
            oe_infer_params params;
            oe_infer_params_init(&params);
            params.stride = stride;
            params.fwhm = in_fwhm;
            params.normalized = in_raw_fusion ? 0 : 1;
            params.threads = threads;
            oe_heatmap* hm = nullptr;
            if (oe_status s = oe_infer_frame(h.model, in_dataset.c_str(), in_frame, &params, &hm);
                s != OE_OK) {
                return fail(s);
            }
            std::unique_ptr<oe_heatmap, decltype(&oe_heatmap_close)> guard(hm, &oe_heatmap_close);
            char base[64];
            std::snprintf(base, sizeof(base), "heat_f%03d_s%02d", in_frame, stride);
            const std::string gray = (fs::path(in_out) / (std::string(base) + ".png")).string();
            const std::string color =
                (fs::path(in_out) / (std::string(base) + "_color.png")).string();
            if (oe_status s = oe_heatmap_write_gray(hm, gray.c_str()); s != OE_OK) {
                return fail(s);
            }
            if (oe_status s = oe_heatmap_write_color(hm, color.c_str()); s != OE_OK) {
                return fail(s);
            }
            if (in_mask_threshold > 0.0) {
                const std::string mask =
                    (fs::path(in_out) / (std::string(base) + "_mask.png")).string();
                if (oe_status s = oe_heatmap_write_mask(hm, in_mask_threshold, mask.c_str());
                    s != OE_OK) {
                    return fail(s);
                }
            }
            json entry{{"frame", in_frame},
                       {"stride", stride},
                       {"patch_count", oe_heatmap_patch_count(hm)},
                       {"wall_time_s", oe_heatmap_wall_time(hm)},
                       {"gray", gray},
                       {"color", color}};
            side << entry.dump() << "\n";
            std::cout << "frame " << in_frame << " stride " << stride << ": "
                      << oe_heatmap_patch_count(hm) << " patches in "
                      << oe_heatmap_wall_time(hm) << " s -> " << gray << "\n";
        }
        write_run_config(fs::path(in_out) / "run_config.json", "infer",
                         {{"model", in_model},
                          {"dataset_dir", in_dataset},
                          {"frame", in_frame},
                          {"strides", in_strides},
                          {"fwhm", in_fwhm},
                          {"mask_threshold", in_mask_threshold},
                          {"raw_fusion", in_raw_fusion},
                          {"deterministic", deterministic},
                          {"out_dir", in_out}});
        return 0;
    }

    return 1;
}
