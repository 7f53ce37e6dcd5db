#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  const char* p = std::getenv("IMND_CLI");
  REQUIRE_MESSAGE(p != nullptr, "IMND_CLI must point at the built binary");
  return p;
}

struct RunResult {
  int code = -1;
  std::string out;  // stdout + stderr
};

RunResult run(const std::string& args) {
  static int counter = 0;
  const fs::path log =
      fs::temp_directory_path() / ("imnd_cli_log_" + std::to_string(::getpid()) + "_" +
                                   std::to_string(counter++) + ".txt");
  const std::string cmd = cli_path() + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult res;
  res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  res.out = ss.str();
  fs::remove(log);
  return res;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Workspace {
  fs::path root;
  fs::path conf;
  Workspace() {
    root = fs::temp_directory_path() / ("imnd_cli_ws_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    conf = root / "run.conf";
    std::ofstream out(conf);
    out << "data_dir = " << (root / "data").string() << "\n"
        << "out_dir = " << (root / "out").string() << "\n"
        << "seed = 5\n"
        << "mode = fsda_f\n"
        << "split.train = a,b\n"
        << "split.test = c\n"
        << "split.support_seconds = 6\n"
        << "train.alpha = 1e-3\n"
        << "train.beta = 1e-3\n"
        << "train.inner_steps = 1\n"
        << "train.task_batch = 2\n"
        << "train.outer_iters = 3\n"
        << "train.window_len = 80\n"
        << "train.window_stride = 40\n"
        << "train.max_windows = 2\n"
        << "train.first_order = true\n"
        << "model.d_embed = 6\n"
        << "model.mlp_hidden = 12\n"
        << "model.conv_channels = 6\n"
        << "model.kernel = 3\n"
        << "model.dilations = 1,2,1\n"
        << "loss.j_set = 4,8\n"
        << "domain.a.profile = handheld\n"
        << "domain.a.duration = 20\n"
        << "domain.a.rate = 50\n"
        << "domain.b.profile = wheeled\n"
        << "domain.b.duration = 20\n"
        << "domain.b.rate = 50\n"
        << "domain.c.profile = handheld\n"
        << "domain.c.duration = 20\n"
        << "domain.c.rate = 50\n"
        << "domain.c.gyro_bias = -0.02,0.02\n";
  }
  ~Workspace() { fs::remove_all(root); }
};

}  // namespace

TEST_CASE("argument handling and exit codes") {
  CHECK(run("--help").code == 0);
  CHECK(run("").code == 2);             // a subcommand is required
  CHECK(run("frobnicate").code == 2);   // unknown subcommand
  const RunResult missing = run("train --config /nonexistent/x.conf --dry-run");
  CHECK(missing.code == 2);
  CHECK(missing.out.find("config error") != std::string::npos);
}

TEST_CASE("config errors from overrides exit with 2") {
  Workspace ws;
  const RunResult bad_mode = run("train --config " + ws.conf.string() + " --mode turbo --dry-run");
  CHECK(bad_mode.code == 2);
  const RunResult bad_key = run("train --config " + ws.conf.string() + " --threads=-3 --dry-run");
  CHECK(bad_key.code == 2);
}

TEST_CASE("full pipeline: dry-run, simulate, train, adapt, eval, embeddings") {
  Workspace ws;
  const std::string cfg = " --config " + ws.conf.string();

  // dry-run prints the resolved config without touching the filesystem
  const RunResult dry = run("train" + cfg + " --dry-run");
  CHECK(dry.code == 0);
  CHECK(dry.out.find("seed = 5") != std::string::npos);
  CHECK(dry.out.find("mode = fsda_f") != std::string::npos);
  CHECK(dry.out.find("domain.c.gyro_bias = ") != std::string::npos);
  CHECK_FALSE(fs::exists(ws.root / "out"));
  const RunResult dry2 = run("train" + cfg + " --dry-run --seed 9");
  CHECK(dry2.out.find("seed = 9") != std::string::npos);

  // simulate is deterministic for a fixed config
  REQUIRE(run("simulate" + cfg).code == 0);
  const std::string first = slurp(ws.root / "data" / "a.csv");
  CHECK(!first.empty());
  const std::string manifest = slurp(ws.root / "data" / "manifest.csv");
  CHECK(manifest.find("domain,profile,seed,samples,rate_hz,duration_s") == 0);
  CHECK(std::count(manifest.begin(), manifest.end(), '\n') == 4);  // header + 3 domains
  CHECK(manifest.find("a,handheld,") != std::string::npos);
  REQUIRE(run("simulate" + cfg).code == 0);
  CHECK(slurp(ws.root / "data" / "a.csv") == first);
  // a different seed changes the data
  REQUIRE(run("simulate" + cfg + " --seed 6 --out " + (ws.root / "data2").string()).code == 0);
  CHECK(slurp(ws.root / "data2" / "a.csv") != first);

  // train writes a checkpoint and a log
  const RunResult tr = run("train" + cfg);
  CHECK(tr.code == 0);
  const fs::path ckpt = ws.root / "out" / "checkpoint.imnd";
  REQUIRE(fs::exists(ckpt));
  CHECK(fs::exists(ws.root / "out" / "train_log.csv"));
  CHECK(slurp(ws.root / "out" / "train_log.csv")
            .starts_with("iter,mode,task,loss_R,loss_D,loss_total"));

  // adapt tags the checkpoint with the support domain
  const RunResult ad = run("adapt" + cfg + " --checkpoint " + ckpt.string() + " --support " +
                           (ws.root / "data" / "c.csv").string() + " --out " +
                           (ws.root / "out" / "adapted.imnd").string());
  CHECK(ad.code == 0);
  CHECK(ad.out.find("domain 'c'") != std::string::npos);
  CHECK(fs::exists(ws.root / "out" / "adapted.imnd"));

  // eval produces per-mode series files and reports
  const RunResult ev = run("eval" + cfg + " --checkpoint " + ckpt.string());
  CHECK(ev.code == 0);
  CHECK(fs::exists(ws.root / "out" / "report.csv"));
  CHECK(fs::exists(ws.root / "out" / "report.txt"));
  CHECK(fs::exists(ws.root / "out" / "series_c_fsda_f.csv"));
  CHECK(fs::exists(ws.root / "out" / "series_c_raw.csv"));
  CHECK(ev.out.find("| mean") != std::string::npos);
  CHECK(ev.out.find("raw") != std::string::npos);

  const RunResult ev_ad = run("eval" + cfg + " --checkpoint " + ckpt.string() +
                              " --adapt --no-raw");
  CHECK(ev_ad.code == 0);
  CHECK(fs::exists(ws.root / "out" / "series_c_fsda_f_adapt.csv"));
  const std::string report = slurp(ws.root / "out" / "report.csv");
  CHECK(report.find("fsda_f+adapt") != std::string::npos);
  CHECK(report.find(",raw,") == std::string::npos);

  // embeddings for all split sequences
  const RunResult emb = run("export-embeddings" + cfg + " --checkpoint " + ckpt.string() +
                            " --out " + (ws.root / "out" / "emb.csv").string());
  CHECK(emb.code == 0);
  const std::string emb_csv = slurp(ws.root / "out" / "emb.csv");
  CHECK(emb_csv.find("domain_tag,t_ns,e_1") != std::string::npos);
  CHECK(emb_csv.find("c,") != std::string::npos);

  // a corrupt checkpoint is a runtime failure, not a crash
  {
    std::ofstream bad(ws.root / "out" / "bad.imnd");
    bad << "not a checkpoint";
  }
  const RunResult corrupt = run("eval" + cfg + " --checkpoint " +
                                (ws.root / "out" / "bad.imnd").string());
  CHECK(corrupt.code == 1);
  CHECK(corrupt.out.find("error:") != std::string::npos);
}
