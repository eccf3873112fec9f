#include <CLI11.hpp>

#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include "jcae/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Joint convolutional auto-encoder for infrared/visible image fusion"};
  app.require_subcommand(1);

  jcae::RunConfig train;
  std::string vgg, loss_log;
  std::size_t width = 360, height = 280;
  auto* train_cmd = app.add_subcommand("train", "Train on a directory of <stem>_ir / <stem>_vis pairs");
  train_cmd->add_option("--data", train.data_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--epochs", train.epochs, "Number of epochs (>= 1)")->required();
  train_cmd->add_option("--lr", train.lr, "ADAM learning rate")->capture_default_str();
  train_cmd->add_option("--lambda", train.lambda, "SSIM loss weight")->capture_default_str();
  train_cmd->add_option("--seed", train.seed, "Initialization and shuffle seed")->capture_default_str();
  train_cmd->add_option("--vgg", vgg, "VGG19 head weight file for encoder init")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train.checkpoint, "Checkpoint path")->required();
  train_cmd->add_option("--log", loss_log, "Also write the loss log here");
  train_cmd->add_option("--width", width, "Training width (0 keeps native size)")->capture_default_str();
  train_cmd->add_option("--height", height, "Training height (0 keeps native size)")->capture_default_str();

  std::string fuse_model, fuse_ir, fuse_vis, fuse_out;
  auto* fuse_cmd = app.add_subcommand("fuse", "Fuse one registered infrared/visible pair");
  fuse_cmd->add_option("--model", fuse_model, "Checkpoint")->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("--ir", fuse_ir, "Infrared image (.pgm/.png)")->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("--vis", fuse_vis, "Visible image (.pgm/.png)")->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("--out", fuse_out, "Output image (.pgm/.png)")->required();

  jcae::EvalConfig eval;
  std::string baseline, report_path;
  auto* eval_cmd = app.add_subcommand("eval", "Score fused images against their sources");
  eval_cmd->add_option("--fused", eval.fused_dir, "Fused image directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--ir", eval.ir_dir, "Infrared source directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--vis", eval.vis_dir, "Visible source directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--baseline", baseline, "Key=value report of a baseline method")->check(CLI::ExistingFile);
  eval_cmd->add_option("--report", report_path, "Write the key=value report here instead of stdout");

  jcae::InspectConfig inspect;
  std::string branch;
  auto* inspect_cmd = app.add_subcommand("inspect", "Export one feature channel as grayscale images");
  inspect_cmd->alias("inspect-features");
  inspect_cmd->add_option("--model", inspect.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  inspect_cmd->add_option("--ir", inspect.ir, "Infrared image")->required()->check(CLI::ExistingFile);
  inspect_cmd->add_option("--vis", inspect.vis, "Visible image")->required()->check(CLI::ExistingFile);
  inspect_cmd->add_option("--branch", branch, "Feature stack")
      ->required()
      ->check(CLI::IsMember({"private-a", "private-b", "common"}));
  inspect_cmd->add_option("--channel", inspect.channel, "Channel index in [0,128)")->required();
  inspect_cmd->add_option("--out", inspect.out_dir, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      if (!vgg.empty()) train.vgg = vgg;
      if (!loss_log.empty()) train.loss_log = loss_log;
      train.resolution = {width, height};
      jcae::cmd_train(train, &std::cout);
    } else if (*fuse_cmd) {
      jcae::cmd_fuse(fuse_model, fuse_ir, fuse_vis, fuse_out);
    } else if (*eval_cmd) {
      if (!baseline.empty()) eval.baseline = baseline;
      const jcae::MetricReport report = jcae::cmd_eval(eval);
      std::cout << jcae::format_table(report);
      if (report_path.empty()) {
        std::cout << '\n' << jcae::format_key_value(report);
      } else {
        std::ofstream out(report_path, std::ios::trunc);
        out << jcae::format_key_value(report);
        if (!out) throw jcae::Error("cannot write " + report_path);
      }
    } else if (*inspect_cmd) {
      inspect.branch = jcae::parse_feature_branch(branch);
      for (const auto& path : jcae::cmd_inspect(inspect).files) std::cout << path.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
