#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "sdcnet/sdcnet.hpp"

namespace {

namespace fs = std::filesystem;
using namespace sdcnet;

enum ExitCode : int {
  kOk = 0,
  kOther = 1,
  kUsage = 2,
  kData = 3,
  kDivergence = 4,
  kGradcheck = 5,
  kCheckpoint = 6,
};

struct Options {
  std::string preset = "g3-s";
  std::size_t classes = 10;
  std::string format = "text";
  std::string data_dir;
  std::size_t epochs = 300;
  std::size_t batch_size = 128;
  std::size_t subset = 0;
  std::size_t test_subset = 0;
  std::size_t synthetic = 0;
  std::uint64_t seed = 1;
  std::string checkpoint;
  bool resume = false;
  std::size_t eval_every = 1;
  bool no_augment = false;
  bool decay_bn = false;
  double tolerance = 1e-4;
};

std::string data_dir_or_env(const Options& o) {
  if (!o.data_dir.empty()) return o.data_dir;
  if (const char* env = std::getenv("SDCNET_DATA_DIR")) return env;
  return {};
}

void echo(std::ostream& os, const std::string& key, const auto& value) {
  os << "# " << key << " = " << value << '\n';
}

CifarSplits load_data(const Options& o, std::size_t classes) {
  if (o.synthetic > 0) {
    CifarSplits s;
    s.train = synthetic_cifar10(o.synthetic, o.seed, 0.35, Split::Train, classes);
    s.test = synthetic_cifar10(std::max<std::size_t>(o.synthetic / 4, 1), o.seed + 1, 0.35,
                               Split::Test, classes);
    s.test.set_stats(s.train.stats());
    return s;
  }
  const std::string dir = data_dir_or_env(o);
  if (dir.empty()) throw NotFoundError("no data directory: pass --data-dir or set SDCNET_DATA_DIR");
  CifarSplits s = classes == 100 ? load_cifar100(dir) : load_cifar10(dir);
  if (classes != 10 && classes != 100)
    throw ConfigError("classes must be 10 or 100 for CIFAR data");
  return s;
}

int cmd_describe(const Options& o) {
  echo(std::cerr, "preset", o.preset);
  echo(std::cerr, "classes", o.classes);
  std::cout << describe(with_classes(preset(o.preset), o.classes));
  return kOk;
}

std::string millions(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v / 1e6 << "M";
  return os.str();
}

std::string percent(double v) {
  std::ostringstream os;
  os << std::showpos << std::fixed << std::setprecision(2) << 100.0 * v << "%";
  return os.str();
}

int cmd_count(const Options& o) {
  if (o.format != "text" && o.format != "csv") throw CLI::ValidationError("--format", "text or csv");
  echo(std::cerr, "preset", o.preset);
  echo(std::cerr, "classes", o.classes);
  echo(std::cerr, "format", o.format);
  const auto report = count_network(preset(o.preset), o.classes);
  if (o.format == "csv") {
    std::cout << report.to_csv();
    return kOk;
  }
  std::cout << report.to_text();
  const auto target = target_cost(o.preset);
  if (target && o.classes == 10) {
    const auto f = static_cast<double>(report.total_flops);
    const auto p = static_cast<double>(report.total_params);
    std::cout << "target: " << millions(target->flops) << " FLOPs, " << millions(target->params)
              << " params\n";
    std::cout << "deviation: FLOPs " << percent(relative_deviation(f, target->flops)) << ", params "
              << percent(relative_deviation(p, target->params)) << '\n';
  }
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  echo(std::cout, "tolerance", o.tolerance);
  echo(std::cout, "seed", o.seed);
  bool ok = true;
  for (const auto& r : gradcheck_suite(o.seed, o.tolerance)) {
    std::cout << r.to_text();
    ok = ok && r.passed();
  }
  std::cout << (ok ? "gradcheck PASS" : "gradcheck FAIL") << '\n';
  return ok ? kOk : kGradcheck;
}

int cmd_train(const Options& o) {
  TrainConfig tc;
  tc.preset = o.preset;
  tc.classes = o.classes;
  tc.batch_size = o.batch_size;
  tc.epochs = o.epochs;
  tc.seed = o.seed;
  if (o.subset > 0) tc.subset_size = o.subset;
  if (o.test_subset > 0) tc.test_subset_size = o.test_subset;
  tc.checkpoint = o.checkpoint;
  tc.eval_every = o.eval_every;
  tc.augment = !o.no_augment;
  tc.decay_bn_params = o.decay_bn;
  tc.validate();
  if (o.resume && o.checkpoint.empty()) throw CLI::ValidationError("--resume", "needs --checkpoint");

  TrainingState<float> state = o.resume ? checkpoint_load<float>(tc.checkpoint)
                                        : start_training<float>(with_classes(preset(tc.preset), tc.classes), tc.seed);
  if (!o.resume) state.optimizer.decay_bn_params = tc.decay_bn_params;
  const NetworkConfig& net_cfg = state.net.config;

  CifarSplits data = load_data(o, net_cfg.classes);
  if (tc.subset_size) data.train = data.train.head(*tc.subset_size);
  if (tc.test_subset_size) data.test = data.test.head(*tc.test_subset_size);

  echo(std::cout, "command", "train");
  echo(std::cout, "network", net_cfg.name);
  echo(std::cout, "classes", net_cfg.classes);
  echo(std::cout, "parameters", state.net.parameter_count());
  echo(std::cout, "data", o.synthetic > 0 ? "synthetic" : data_dir_or_env(o));
  echo(std::cout, "train_examples", data.train.size());
  echo(std::cout, "test_examples", data.test.size());
  echo(std::cout, "epochs", tc.epochs);
  echo(std::cout, "batch_size", tc.batch_size);
  echo(std::cout, "seed", o.resume ? std::string("(from checkpoint)") : std::to_string(tc.seed));
  echo(std::cout, "lr", "cosine 0.1 -> 0.002 per epoch");
  echo(std::cout, "momentum", state.optimizer.momentum);
  echo(std::cout, "weight_decay", state.optimizer.weight_decay);
  echo(std::cout, "decay_bn_params", state.optimizer.decay_bn_params ? "yes" : "no");
  echo(std::cout, "augment", tc.augment ? "pad 4, crop 32, flip 0.5" : "off");
  echo(std::cout, "eval_every", tc.eval_every);
  echo(std::cout, "checkpoint", tc.checkpoint.empty() ? std::string("(none)") : tc.checkpoint.string());
  echo(std::cout, "start_epoch", state.epoch);
  std::cout << "epoch,lr,train_loss,train_acc,test_acc\n" << std::flush;

  train_until(state, data.train, tc.schedule(), tc.epochs, tc.options(),
              [&](TrainingState<float>& s, const EpochMetrics& m) {
                std::ostringstream line;
                line << s.epoch << ',' << std::setprecision(6) << m.lr << ',' << m.mean_loss << ','
                     << m.train_accuracy << ',';
                const bool eval = tc.eval_every > 0 &&
                                  (s.epoch % tc.eval_every == 0 || s.epoch == tc.epochs);
                if (eval) line << evaluate(s.net, data.test).accuracy;
                std::cout << line.str() << '\n' << std::flush;
                if (!tc.checkpoint.empty()) {
                  const fs::path tmp = tc.checkpoint.string() + ".tmp";
                  checkpoint_save(s, tmp);
                  fs::rename(tmp, tc.checkpoint);
                }
              });
  return kOk;
}

int cmd_eval(const Options& o) {
  if (o.checkpoint.empty()) throw CLI::ValidationError("--checkpoint", "required");
  TrainingState<float> state = checkpoint_load<float>(o.checkpoint);
  CifarSplits data = load_data(o, state.net.config.classes);
  if (o.test_subset > 0) data.test = data.test.head(o.test_subset);
  echo(std::cout, "command", "eval");
  echo(std::cout, "checkpoint", o.checkpoint);
  echo(std::cout, "network", state.net.config.name);
  echo(std::cout, "epoch", state.epoch);
  echo(std::cout, "test_examples", data.test.size());
  const auto r = evaluate(state.net, data.test);
  std::cout << "accuracy=" << std::setprecision(6) << r.accuracy << " loss=" << r.mean_loss
            << " count=" << r.count << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"SdcNet: grouped depthwise-separable CNNs for CIFAR"};
  app.require_subcommand(1);

  auto add_preset = [&](CLI::App* sub) {
    sub->add_option("--preset", o.preset, "g4-l, g3-s, g4-l-f, g3-s-f or tiny")->capture_default_str();
    sub->add_option("--classes", o.classes, "classifier outputs (10 or 100 for CIFAR)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
  };
  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--data-dir", o.data_dir, "CIFAR binary directory (default $SDCNET_DATA_DIR)");
    sub->add_option("--test-subset", o.test_subset, "use only the first N test images");
    sub->add_option("--synthetic", o.synthetic, "use N synthetic training images instead of CIFAR");
  };

  auto* describe_cmd = app.add_subcommand("describe", "print the architecture table");
  add_preset(describe_cmd);

  auto* count_cmd = app.add_subcommand("count", "per-layer FLOPs and parameter counts");
  add_preset(count_cmd);
  count_cmd->add_option("--format", o.format, "text or csv")
      ->capture_default_str()
      ->check(CLI::IsMember({"text", "csv"}));

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
  grad_cmd->add_option("--tolerance", o.tolerance, "maximum relative error")->capture_default_str();
  grad_cmd->add_option("--seed", o.seed)->capture_default_str();

  auto* train_cmd = app.add_subcommand("train", "train with SGD (Nesterov) and a cosine schedule");
  add_preset(train_cmd);
  add_data(train_cmd);
  train_cmd->add_option("--epochs", o.epochs)->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch-size", o.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--subset", o.subset, "use only the first N training images");
  train_cmd->add_option("--seed", o.seed)->capture_default_str();
  train_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint written after every epoch");
  train_cmd->add_flag("--resume", o.resume, "continue from --checkpoint");
  train_cmd->add_option("--eval-every", o.eval_every, "test evaluation cadence in epochs (0: never)")
      ->capture_default_str();
  train_cmd->add_flag("--no-augment", o.no_augment, "disable pad/crop/flip augmentation");
  train_cmd->add_flag("--decay-bn", o.decay_bn, "apply weight decay to batch-norm parameters");

  auto* eval_cmd = app.add_subcommand("eval", "top-1 accuracy of a checkpoint on the test split");
  add_data(eval_cmd);
  eval_cmd->add_option("--checkpoint", o.checkpoint)->required();
  eval_cmd->add_option("--seed", o.seed, "seed of synthetic data")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*describe_cmd) return cmd_describe(o);
    if (*count_cmd) return cmd_count(o);
    if (*grad_cmd) return cmd_gradcheck(o);
    if (*train_cmd) return cmd_train(o);
    if (*eval_cmd) return cmd_eval(o);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NotFoundError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kCheckpoint;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kUsage;
}
