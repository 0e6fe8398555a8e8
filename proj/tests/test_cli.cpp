#include <unistd.h>

#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pdsa/commands.hpp"
#include "pdsa/config.hpp"

using namespace pdsa;

namespace {

std::string temp_dir(const std::string& stem) {
  auto d = std::filesystem::path("/tmp") /
           ("pdsa_cli_" + stem + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d.string();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

// small, fast protocol shared by the command smoke tests
RunConfig tiny_config(const std::string& dir) {
  RunConfig cfg;
  cfg.data.n_points = 32;
  cfg.data.train_per_class = 2;
  cfg.data.test_per_class = 1;
  cfg.train.epochs = 2;
  cfg.train.batch = 4;
  cfg.train.seed = 5;
  cfg.io.out_dir = dir;
  return cfg;
}

}  // namespace

TEST_CASE("config rendering and reparsing is a fixpoint", "[config]") {
  RunConfig cfg;
  cfg.model.stages = {{2, 0.3, 8}, {4, 0.6, 12}, {2, 1.2, 4}};
  cfg.model.cdip = false;
  cfg.train.lr = 0.01;
  cfg.train.augment = true;
  cfg.io.checkpoint = "somewhere.ckpt";
  cfg.eval.split = "train";
  const std::string text = render_config(cfg);

  RunConfig back;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) apply_config_override(back, line);
  }
  REQUIRE(render_config(back) == text);
}

TEST_CASE("config values parse with type checking", "[config]") {
  RunConfig cfg;
  apply_config_value(cfg, "model.channels", "24");
  REQUIRE(cfg.model.channels == 24);
  apply_config_value(cfg, "model.stages", "2:0.25:8,8:1.5:32");
  REQUIRE(cfg.model.stages.size() == 2);
  REQUIRE(cfg.model.stages[1].stride == 8);
  REQUIRE(cfg.model.stages[1].radius == 1.5);
  REQUIRE(cfg.model.stages[1].k == 32);
  apply_config_value(cfg, "model.cdip", "off");
  REQUIRE_FALSE(cfg.model.cdip);
  apply_config_value(cfg, "model.cdip", "1");
  REQUIRE(cfg.model.cdip);
  apply_config_value(cfg, "train.lr", "3e-3");
  REQUIRE(cfg.train.lr == 3e-3);
  apply_config_value(cfg, "eval.split", "train");
  REQUIRE(cfg.eval.split == "train");

  REQUIRE_THROWS_WITH(apply_config_value(cfg, "model.frobnicate", "1"),
                      Catch::Matchers::ContainsSubstring("unknown config key 'model.frobnicate'"));
  REQUIRE_THROWS_WITH(apply_config_value(cfg, "train.epochs", "sixty"),
                      Catch::Matchers::ContainsSubstring("expected integer"));
  REQUIRE_THROWS_WITH(apply_config_value(cfg, "train.lr", "1.5x"),
                      Catch::Matchers::ContainsSubstring("expected number"));
  REQUIRE_THROWS_WITH(apply_config_value(cfg, "model.cics", "maybe"),
                      Catch::Matchers::ContainsSubstring("boolean"));
  REQUIRE_THROWS_WITH(apply_config_value(cfg, "model.stages", "2:0.3"),
                      Catch::Matchers::ContainsSubstring("stages"));
  REQUIRE_THROWS_WITH(apply_config_value(cfg, "eval.split", "validation"),
                      Catch::Matchers::ContainsSubstring("split"));
}

TEST_CASE("config files respect comments and report line numbers", "[config]") {
  const auto dir = temp_dir("cfgfile");
  const auto path = dir + "/run.cfg";
  {
    std::ofstream f(path);
    f << "# a comment line\n"
      << "train.epochs = 7   # trailing comment\n"
      << "\n"
      << "model.channels = 8\n";
  }
  RunConfig cfg;
  load_config_file(cfg, path);
  REQUIRE(cfg.train.epochs == 7);
  REQUIRE(cfg.model.channels == 8);

  {
    std::ofstream f(path);
    f << "train.epochs = 7\n"
      << "model.channels = 8\n"
      << "train.what = 1\n";
  }
  RunConfig bad;
  REQUIRE_THROWS_WITH(load_config_file(bad, path),
                      Catch::Matchers::ContainsSubstring(":3: unknown config key"));

  {
    std::ofstream f(path);
    f << "just some words\n";
  }
  REQUIRE_THROWS_WITH(load_config_file(bad, path),
                      Catch::Matchers::ContainsSubstring(":1: expected 'key = value'"));

  REQUIRE_THROWS_WITH(load_config_file(bad, dir + "/absent.cfg"),
                      Catch::Matchers::ContainsSubstring("cannot open config file"));
  REQUIRE_THROWS_WITH(apply_config_override(bad, "train.lr"),
                      Catch::Matchers::ContainsSubstring("KEY=VALUE"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("help text names every config key with its default", "[config]") {
  const std::string help = config_help_text();
  for (const ConfigKey& k : config_schema()) {
    INFO(k.name);
    REQUIRE(help.find("  " + std::string(k.name) + " (default ") != std::string::npos);
  }
  REQUIRE(help.find("(default 0.002)") != std::string::npos);   // train.lr
  REQUIRE(help.find("(default <empty>)") != std::string::npos); // io paths
}

TEST_CASE("output directory resolution prefers explicit over environment", "[config]") {
  RunConfig cfg;
  ::unsetenv("PDSA_OUT_DIR");
  REQUIRE(cfg.out_dir() == "out");
  ::setenv("PDSA_OUT_DIR", "/tmp/pdsa_envdir", 1);
  REQUIRE(cfg.out_dir() == "/tmp/pdsa_envdir");
  cfg.io.out_dir = "elsewhere";
  REQUIRE(cfg.out_dir() == "elsewhere");
  ::unsetenv("PDSA_OUT_DIR");
}

TEST_CASE("training writes its artifacts and is reproducible", "[cli][train]") {
  const auto dir1 = temp_dir("train1");
  const auto dir2 = temp_dir("train2");
  RunConfig cfg = tiny_config(dir1);
  std::ostringstream out1, out2;
  REQUIRE(cmd_train(cfg, out1) == 0);
  cfg.io.out_dir = dir2;
  REQUIRE(cmd_train(cfg, out2) == 0);

  const std::string log1 = slurp(dir1 + "/train_log.csv");
  const std::string log2 = slurp(dir2 + "/train_log.csv");
  REQUIRE(log1 == log2);
  REQUIRE(log1.rfind("epoch,loss,train_acc,test_acc\n", 0) == 0);
  // header + one row per epoch
  REQUIRE(std::count(log1.begin(), log1.end(), '\n') == 3);
  REQUIRE(std::filesystem::exists(dir1 + "/final.ckpt"));
  REQUIRE(std::filesystem::exists(dir1 + "/best.ckpt"));

  // the echoed effective config reparses to the same settings
  RunConfig echoed;
  load_config_file(echoed, dir1 + "/config_effective.txt");
  REQUIRE(echoed.train.epochs == cfg.train.epochs);
  REQUIRE(echoed.data.n_points == cfg.data.n_points);
  REQUIRE(render_config(echoed) != render_config(RunConfig{}));  // not just defaults

  // checkpoints are loadable into a matching model
  RunConfig ld = cfg;
  ld.io.checkpoint = dir1 + "/final.ckpt";
  ModelState st = load_model(ld);
  REQUIRE(st.store.size() > 0);
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("zero-epoch training still emits checkpoints and an empty log body", "[cli][train]") {
  const auto dir = temp_dir("train0");
  RunConfig cfg = tiny_config(dir);
  cfg.train.epochs = 0;
  std::ostringstream os;
  REQUIRE(cmd_train(cfg, os) == 0);
  REQUIRE(slurp(dir + "/train_log.csv") == "epoch,loss,train_acc,test_acc\n");
  REQUIRE(std::filesystem::exists(dir + "/final.ckpt"));
  REQUIRE(std::filesystem::exists(dir + "/best.ckpt"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("evaluation agrees with the accuracy logged during training", "[cli][eval]") {
  const auto dir = temp_dir("eval");
  RunConfig cfg = tiny_config(dir);
  std::ostringstream os;
  REQUIRE(cmd_train(cfg, os) == 0);

  // final logged test accuracy
  const std::string log = slurp(dir + "/train_log.csv");
  const auto last_comma = log.find_last_of(',');
  const double logged = std::stod(log.substr(last_comma + 1));

  RunConfig ev = cfg;
  ev.io.checkpoint = dir + "/final.ckpt";
  std::ostringstream eos;
  REQUIRE(cmd_eval(ev, eos) == 0);
  const std::string csv = slurp(dir + "/metrics.csv");
  REQUIRE(csv.rfind("class,tp,fp,fn,iou\n", 0) == 0);
  REQUIRE(csv == eos.str());

  // overall accuracy from the confusion counts
  long tp = 0, fn = 0;
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);  // header
  int rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');  // class name
    std::getline(ls, cell, ',');
    tp += std::stol(cell);
    std::getline(ls, cell, ',');  // fp
    std::getline(ls, cell, ',');
    fn += std::stol(cell);
  }
  REQUIRE(rows == 4);
  const double oa = static_cast<double>(tp) / static_cast<double>(tp + fn);
  REQUIRE(oa == Catch::Approx(logged).margin(1e-8));
  std::filesystem::remove_all(dir);
}

TEST_CASE("evaluating the train split memorizes a tiny dataset", "[cli][eval][slow]") {
  const auto dir = temp_dir("memo");
  RunConfig cfg;
  cfg.data.n_points = 32;
  cfg.data.train_per_class = 1;
  cfg.data.test_per_class = 1;
  cfg.train.epochs = 40;
  cfg.train.batch = 4;
  cfg.train.lr = 0.005;
  cfg.train.seed = 3;
  cfg.io.out_dir = dir;

  PreparedData data = prepare_data(cfg);
  ModelState st = init_model(cfg);
  run_training(cfg, st, data);
  const double train_oa = evaluate_objects(st.store, st.ids, cfg.model, data.train).oa;
  REQUIRE(train_oa >= 0.99);
  std::filesystem::remove_all(dir);
}

TEST_CASE("eval requires a checkpoint and rejects shape mismatches", "[cli][eval]") {
  const auto dir = temp_dir("evalbad");
  RunConfig cfg = tiny_config(dir);
  cfg.train.epochs = 0;
  std::ostringstream os;
  REQUIRE(cmd_train(cfg, os) == 0);

  RunConfig ev = cfg;
  REQUIRE_THROWS_WITH(cmd_eval(ev, os), Catch::Matchers::ContainsSubstring("io.checkpoint"));

  ev.io.checkpoint = dir + "/final.ckpt";
  ev.model.channels = 24;  // layout mismatch against the stored model
  REQUIRE_THROWS_WITH(cmd_eval(ev, os), Catch::Matchers::ContainsSubstring("shape mismatch"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("ablation sweep reports all four variants per seed", "[cli][ablate]") {
  const auto dir = temp_dir("ablate");
  RunConfig cfg = tiny_config(dir);
  cfg.train.epochs = 0;  // untrained models keep the sweep fast
  cfg.ablate_seeds = 1;
  std::ostringstream os;
  REQUIRE(cmd_ablate(cfg, os) == 0);
  const std::string csv = slurp(dir + "/ablate.csv");
  REQUIRE(csv.rfind("variant,seed,test_oa,mean_nbr_var\n", 0) == 0);
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 5);
  REQUIRE(csv.find("baseline,0,") != std::string::npos);
  REQUIRE(csv.find("+CDIP,0,") != std::string::npos);
  REQUIRE(csv.find("+CDIP+Dw,0,") != std::string::npos);
  REQUIRE(csv.find("+CDIP+Dw+CICS,0,") != std::string::npos);
  for (const char* tag : {"baseline", "cdip", "cdip_dw", "cdip_dw_cics"})
    REQUIRE(std::filesystem::exists(dir + "/ablate_" + std::string(tag) + "_s0.ckpt"));
  REQUIRE(os.str().find("variant,seed,test_oa,mean_nbr_var") != std::string::npos);

  cfg.ablate_seeds = 0;
  REQUIRE_THROWS_WITH(cmd_ablate(cfg, os), Catch::Matchers::ContainsSubstring("ablate.seeds"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("inspection writes normalized heat and the key subset", "[cli][inspect]") {
  const auto dir = temp_dir("inspect");
  RunConfig cfg = tiny_config(dir);
  cfg.train.epochs = 0;
  std::ostringstream os;
  REQUIRE(cmd_train(cfg, os) == 0);

  auto cloud = generate_shape({ShapeKind::cube, 32, 0.01, 9});
  const std::string input = dir + "/input.ply";
  write_cloud(input, cloud);

  RunConfig ins = cfg;
  ins.io.checkpoint = dir + "/final.ckpt";
  REQUIRE(cmd_inspect(ins, input, os) == 0);

  auto heat = read_cloud(dir + "/heat.ply");
  REQUIRE(heat.cloud.size() == 32);
  REQUIRE(heat.has_heat);
  REQUIRE(heat.has_label);  // labels pass through
  double mx = 0.0;
  for (double h : heat.heat) {
    REQUIRE(h >= 0.0);
    REQUIRE(h <= 1.0);
    mx = std::max(mx, h);
  }
  REQUIRE(mx == Catch::Approx(1.0).margin(1e-7));

  auto keys = read_cloud(dir + "/keys.ply");
  // first stage keeps ceil(32/4) = 8 centers; rho .25 keeps ceil(2) = 2 keys
  REQUIRE(keys.cloud.size() == 2);

  REQUIRE_THROWS_WITH(cmd_inspect(ins, "", os),
                      Catch::Matchers::ContainsSubstring("input"));
  std::filesystem::remove_all(dir);
}
