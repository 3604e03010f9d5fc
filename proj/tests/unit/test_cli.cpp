#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "helpers.hpp"
#include "nadapt/cli.hpp"
#include "nadapt/config.hpp"
#include "nadapt/trainer.hpp"

using namespace nadapt;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> dataset_overrides() {
  return {"degrade.procedural.count=12", "degrade.procedural.size=32", "degrade.split.syn=6", "degrade.split.real=2",
          "degrade.split.pool=2",        "degrade.split.eval=2"};
}

std::vector<std::string> train_overrides(const fs::path& data) {
  return {"data.root=" + data.string(),    "data.patch=16",    "train.epochs=3", "train.batch=2",
          "train.steps_per_epoch=2",       "train.val_count=2", "diffusion.base_channels=4"};
}

std::vector<std::string> with_overrides(std::vector<std::string> head, const std::vector<std::string>& ov) {
  head.emplace_back("--override");
  head.insert(head.end(), ov.begin(), ov.end());
  return head;
}

int count_pngs(const fs::path& dir) { return static_cast<int>(list_pngs(dir).size()); }

int count_lines(const fs::path& p) {
  const auto s = test::slurp(p);
  return static_cast<int>(std::count(s.begin(), s.end(), '\n'));
}

// Shared tiny dataset, built once per process.
const fs::path& dataset() {
  static test::TempDir dir("cli_data");
  static bool built = false;
  if (!built) {
    auto r = cli(with_overrides({"degrade", "--out", (dir / "ds").string()}, dataset_overrides()));
    REQUIRE(r.code == 0);
    built = true;
  }
  static fs::path p = dir / "ds";
  return p;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("degrade writes the requested split and reproduces it") {
    const auto& ds = dataset();
    CHECK(count_pngs(ds / "syn_clean") == 6);
    CHECK(count_pngs(ds / "syn_degraded") == 6);
    CHECK(count_pngs(ds / "real_degraded") == 2);
    CHECK(count_pngs(ds / "clean_pool") == 2);
    CHECK(count_pngs(ds / "real_eval") == 2);
    CHECK(count_pngs(ds / "real_gt_eval") == 2);
    CHECK(fs::exists(ds / "resolved_config.json"));

    test::TempDir dir("cli_rerun");
    auto r = cli({"degrade", "--config", (ds / "resolved_config.json").string(), "--out", (dir / "b").string()});
    REQUIRE(r.code == 0);
    for (const char* sub : {"syn_clean", "syn_degraded", "real_degraded", "clean_pool", "real_eval", "real_gt_eval"}) {
      for (const auto& f : list_pngs(ds / sub)) {
        CHECK(test::slurp(f) == test::slurp(dir / "b" / sub / f.filename().string()));
      }
    }
    CHECK(test::slurp(ds / "resolved_config.json") == test::slurp(dir / "b" / "resolved_config.json"));
    auto again = cli({"degrade", "--config", (ds / "resolved_config.json").string(), "--out", (dir / "b").string()});
    CHECK(again.code == kExitConfig);
    auto forced =
        cli({"degrade", "--config", (ds / "resolved_config.json").string(), "--out", (dir / "b").string(), "--force"});
    CHECK(forced.code == 0);
  }

  TEST_CASE("degrade rejects a missing or empty source") {
    test::TempDir dir("cli_empty");
    fs::create_directories(dir / "empty");
    auto r = cli({"degrade", "--out", (dir / "o").string(), "--override",
                  "degrade.source_dir=" + (dir / "empty").string()});
    CHECK(r.code == kExitConfig);
    auto m = cli({"degrade", "--out", (dir / "o2").string(), "--override",
                  "degrade.source_dir=" + (dir / "nothing").string()});
    CHECK(m.code == kExitConfig);
    auto none = cli({"degrade", "--out", (dir / "o3").string()});
    CHECK(none.code == kExitConfig);
  }

  TEST_CASE("argument and config errors map to exit code 3") {
    test::TempDir dir("cli_args");
    CHECK(cli({}).code == kExitConfig);
    CHECK(cli({"frobnicate"}).code == kExitConfig);
    CHECK(cli({"train"}).code == kExitConfig);
    CHECK(cli({"train", "--out", (dir / "o").string(), "--override", "seed=1", "seed=2"}).code == kExitConfig);
    CHECK(cli({"train", "--out", (dir / "o").string(), "--override", "train.bogus=1"}).code == kExitConfig);
    CHECK(cli({"train", "--out", (dir / "o").string(), "--config", (dir / "none.json").string()}).code == kExitConfig);
    CHECK(cli({"eval", "--out", (dir / "e").string()}).code == kExitConfig);
    CHECK(cli({"--help"}).code == 0);
  }

  TEST_CASE("train, eval and rerun from the resolved config") {
    const auto& ds = dataset();
    test::TempDir dir("cli_train");
    auto r = cli(with_overrides({"train", "--out", (dir / "t").string(), "--log-degradations"}, train_overrides(ds)));
    REQUIRE(r.code == 0);
    CHECK(count_lines(dir / "t" / "train_log.csv") == 1 + 4);
    CHECK(count_lines(dir / "t" / "degradations.jsonl") == 3 * 2 * 2);
    CHECK(fs::exists(dir / "t" / "restorer.ckpt"));
    CHECK(r.err.find("epoch") != std::string::npos);

    auto e = cli({"eval", "--out", (dir / "e").string(), "--checkpoint", (dir / "t" / "restorer.ckpt").string(),
                  "--override", "data.root=" + ds.string()});
    REQUIRE(e.code == 0);
    CHECK(count_lines(dir / "e" / "metrics.csv") == 1 + 2);
    CHECK(test::slurp(dir / "e" / "metrics.csv").rfind("image_id,psnr_db,ssim\n", 0) == 0);
    auto e2 = cli({"eval", "--config", (dir / "e" / "resolved_config.json").string(), "--out", (dir / "e2").string()});
    REQUIRE(e2.code == 0);
    CHECK(test::slurp(dir / "e" / "metrics.csv") == test::slurp(dir / "e2" / "metrics.csv"));

    auto again = cli({"train", "--config", (dir / "t" / "resolved_config.json").string(), "--out", (dir / "t2").string()});
    REQUIRE(again.code == 0);
    CHECK(test::slurp(dir / "t" / "train_log.csv") == test::slurp(dir / "t2" / "train_log.csv"));
    CHECK(cli({"train", "--config", (dir / "t" / "resolved_config.json").string(), "--out", (dir / "t2").string()})
              .code == kExitConfig);
  }

  TEST_CASE("zero beta gives a zero lambda column") {
    const auto& ds = dataset();
    test::TempDir dir("cli_beta");
    auto ov = train_overrides(ds);
    ov.emplace_back("lambda.beta=0");
    REQUIRE(cli(with_overrides({"train", "--out", (dir / "t").string()}, ov)).code == 0);
    auto log = TrainLog::read_csv(dir / "t" / "train_log.csv");
    for (const auto& row : log.rows) CHECK(row.lambda_dif == 0.0);
  }

  TEST_CASE("divergence exits with code 2") {
    const auto& ds = dataset();
    test::TempDir dir("cli_div");
    auto ov = train_overrides(ds);
    std::erase(ov, std::string("train.epochs=3"));
    ov.insert(ov.end(), {"train.lr=1e30", "train.epochs=20", "train.divergence_patience=2", "adapt.enabled=false"});
    auto r = cli(with_overrides({"train", "--out", (dir / "t").string()}, ov));
    CHECK(r.code == kExitDivergence);
  }

  TEST_CASE("diagnose labels a log") {
    test::TempDir dir("cli_diag");
    TrainLog log;
    const double rows[][4] = {{20, 22, 1, 1}, {21, 21.5, 1, 0.5}, {22, 21, 1, 0.2}, {23, 20.5, 1, 0.05}};
    int e = 0;
    for (const auto& r : rows) {
      TrainRow row;
      row.epoch = e++;
      row.syn_val_psnr = r[0];
      row.real_val_psnr = r[1];
      row.grad_norm_syn = r[2];
      row.grad_norm_real = r[3];
      log.rows.push_back(row);
    }
    log.write_csv(dir / "log.csv");
    auto r = cli({"diagnose", "--log", (dir / "log.csv").string(), "--out", (dir / "d").string()});
    REQUIRE(r.code == 0);
    CHECK(r.out == "stage III\n");
    auto labeled = TrainLog::read_csv(dir / "d" / "train_log.csv");
    CHECK(labeled.rows.back().stage == "III");
    auto loose = cli({"diagnose", "--log", (dir / "log.csv").string(), "--out", (dir / "d2").string(), "--override",
                      "stage.grad_ratio=0.01"});
    CHECK(loose.out == "stage I\n");
    CHECK(cli({"diagnose", "--log", (dir / "missing.csv").string(), "--out", (dir / "d3").string()}).code == kExitFailure);
  }

  TEST_CASE("probe writes the sweep") {
    test::TempDir dir("cli_probe");
    auto r = cli({"probe", "--out", (dir / "p").string(), "--override", "probe.steps=5", "probe.train_images=8",
                  "probe.test_images=4", "probe.image_size=16", "probe.sigmas=[0,40,80]", "probe.draws=1",
                  "probe.base_channels=4", "probe.batch=4"});
    REQUIRE(r.code == 0);
    CHECK(count_lines(dir / "p" / "sweep.csv") == 4);
    CHECK(count_lines(dir / "p" / "probe_loss.csv") == 6);
    CHECK(fs::exists(dir / "p" / "sweep.png"));
    CHECK(r.out.find("spearman") != std::string::npos);
  }

  TEST_CASE("shipped configs resolve") {
    const fs::path root = NADAPT_SOURCE_DIR;
    int n = 0;
    for (const auto& sub : {root / "configs", root / "configs" / "ablation"}) {
      for (const auto& f : fs::directory_iterator(sub)) {
        if (f.path().extension() != ".json") continue;
        CAPTURE(f.path().string());
        CHECK_NOTHROW(RunConfig::from_json(load_config(f.path())));
        ++n;
      }
    }
    CHECK(n >= 7);
  }
}
