// patchda command-line driver.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 training abort.

#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "patchda/checkpoint.hpp"
#include "patchda/config.hpp"
#include "patchda/data.hpp"
#include "patchda/error.hpp"
#include "patchda/harness.hpp"
#include "patchda/io.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kAbort = 3 };

using namespace patchda;

std::vector<std::string> split_ids(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string id; std::getline(in, id, ',');)
    if (!id.empty()) out.push_back(id);
  return out;
}

harness::TrainOptions log_options(const std::filesystem::path& out) {
  harness::TrainOptions o;
  o.log_path = out / "train_log.jsonl";
  o.on_epoch = [](const harness::EpochLog& e) { std::cerr << e.to_json() << '\n'; };
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"patch-based two-stream video domain adaptation"};
  app.require_subcommand(1);

  std::string config_path, out, data_dir, init, ckpt, split = "target/val", json_out, clips;

  auto* gen = app.add_subcommand("gen-data", "render the synthetic two-domain dataset");
  gen->add_option("--config", config_path, "JSON config")->required();
  gen->add_option("--out", out, "output dataset directory")->required();

  auto* local = app.add_subcommand("train-local", "phase 1: train the feature extractor on source clips");
  local->add_option("--data", data_dir)->required();
  local->add_option("--config", config_path)->required();
  local->add_option("--out", out, "checkpoint directory")->required();

  auto* adapt = app.add_subcommand("train-adapt", "phase 2: train relation and adaptation stacks");
  adapt->add_option("--data", data_dir)->required();
  adapt->add_option("--init", init, "phase-1 checkpoint")->required();
  adapt->add_option("--config", config_path)->required();
  adapt->add_option("--out", out, "checkpoint directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  eval->add_option("--data", data_dir)->required();
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--split", split, "domain/split, e.g. target/val");
  eval->add_option("--json", json_out, "write the report here as well");

  auto* vis = app.add_subcommand("visualize-patches", "write frames with the selected spatial patch");
  vis->add_option("--data", data_dir)->required();
  vis->add_option("--ckpt", ckpt)->required();
  vis->add_option("--clips", clips, "comma-separated clip ids")->required();
  vis->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      const Config config = load_config(config_path);
      const auto manifest = data::generate(config.data, out);
      std::cout << "wrote " << manifest.clips.size() << " clips to " << out << " (hash "
                << io::hex64(data::dataset_hash(manifest)) << ")\n";
    } else if (*local) {
      const Config config = load_config(config_path);
      auto dataset = harness::DatasetView::open(data_dir);
      const auto checkpoint = harness::train_local(dataset, config, log_options(out));
      save_checkpoint(checkpoint, out);
      std::cout << "phase-1 checkpoint written to " << out << '\n';
    } else if (*adapt) {
      const Config config = load_config(config_path);
      auto dataset = harness::DatasetView::open(data_dir);
      const auto start = load_checkpoint(init);
      const auto checkpoint = harness::train_adapt(dataset, start, config, log_options(out));
      save_checkpoint(checkpoint, out);
      std::cout << "phase-2 checkpoint written to " << out << '\n';
    } else if (*eval) {
      auto dataset = harness::DatasetView::open(data_dir);
      const auto checkpoint = load_checkpoint(ckpt);
      std::pair<data::Domain, data::Split> which_split;
      try {
        which_split = data::parse_domain_split(split);
      } catch (const InvalidInput& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
      }
      const auto [domain, which] = which_split;
      const auto report = harness::evaluate(checkpoint, dataset, domain, which);
      std::cout << report.to_json() << '\n';
      if (!json_out.empty()) io::write_text(json_out, report.to_json() + "\n");
    } else if (*vis) {
      const auto manifest = data::load_manifest(data_dir);
      const auto checkpoint = load_checkpoint(ckpt);
      std::vector<data::Clip> selected;
      for (const auto& id : split_ids(clips)) selected.push_back(data::load_clip(manifest, id));
      if (selected.empty()) throw InvalidInput("no clip ids given");
      const auto files = harness::visualize_patches(checkpoint, selected, out);
      std::cout << "wrote " << files.size() << " images to " << out << '\n';
    }
  } catch (const TrainingAbort& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kAbort;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const InvalidConfig& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
