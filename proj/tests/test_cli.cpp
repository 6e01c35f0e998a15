#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "json.hpp"
#include "yolo_former/dataset.hpp"

using namespace yf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("yf_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the CLI with stdout and stderr captured into `log`; returns the exit status.
int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(YF_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

}  // namespace

TEST(Manifest, ParsingAndLineNumbers) {
  EXPECT_TRUE(parse_manifest("", 2).empty());
  EXPECT_TRUE(parse_manifest("\n\n", 2).empty());
  const auto r = parse_manifest("{\"image\": \"a.ppm\", \"boxes\": [[1, 2, 5, 6, 1]]}\n", 2);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].boxes[0].box, (Box{1, 2, 5, 6}));
  EXPECT_EQ(r[0].boxes[0].class_id, 1);

  std::string text;
  for (int i = 0; i < 6; ++i) text += "{\"image\": \"x.ppm\", \"boxes\": []}\n";
  for (const std::string bad : {"{\"image\": \"x.ppm\", \"boxes\": [[5, 2, 1, 6, 0]]}",
                                "{\"image\": \"x.ppm\", \"boxes\": [[1, 2, 5, 6, 9]]}", "{not json"}) {
    try {
      parse_manifest(text + bad + "\n", 2);
      FAIL() << bad;
    } catch (const ManifestError& e) {
      EXPECT_NE(std::string(e.what()).find("line 7"), std::string::npos) << e.what();
    }
  }
}

TEST(Manifest, SaveLoadRoundTrip) {
  const auto dir = scratch("roundtrip");
  Dataset d;
  d.class_names = {"circle", "square"};
  d.records = {{"img/0000.ppm", {{Box{1.5, 2, 10, 12.25}, 0}, {Box{3, 3, 9, 9}, 1}}}, {"img/0001.ppm", {}}};
  save_manifest(d, dir);
  const auto back = load_manifest(dir / "manifest.jsonl");
  EXPECT_EQ(back.class_names, d.class_names);
  ASSERT_EQ(back.records.size(), 2u);
  EXPECT_EQ(back.records[0].image, "img/0000.ppm");
  EXPECT_EQ(back.records[0].boxes, d.records[0].boxes);
  EXPECT_TRUE(back.records[1].boxes.empty());
}

TEST(Synthetic, CircleBoxesAreTightAndBackgroundIsSolid) {
  SyntheticSpec spec;
  spec.n_images = 20;
  spec.classes = {"circle"};
  spec.seed = 4;
  for (const auto& s : synth_generate(spec)) {
    const auto& im = s.image;
    auto px = [&](std::size_t x, std::size_t y) {
      return std::array<std::uint8_t, 3>{im.at(x, y, 0), im.at(x, y, 1), im.at(x, y, 2)};
    };
    std::optional<std::array<std::uint8_t, 3>> bg;
    for (std::size_t y = 0; y < im.height; ++y)
      for (std::size_t x = 0; x < im.width; ++x) {
        bool inside_any = false;
        for (const auto& b : s.boxes) {
          const double r = b.box.width() / 2, cx = b.box.cx(), cy = b.box.cy();
          const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
          if (dx * dx + dy * dy <= r * r) {
            inside_any = true;
            EXPECT_EQ(px(x, y), px(static_cast<std::size_t>(cx), static_cast<std::size_t>(cy)));
          }
        }
        if (inside_any) continue;
        if (!bg) bg = px(x, y);
        ASSERT_EQ(px(x, y), *bg) << x << "," << y;
      }
    for (const auto& b : s.boxes) {
      EXPECT_EQ(b.box.width(), b.box.height());
      EXPECT_TRUE(box_in_bounds(b.box, static_cast<double>(im.width), static_cast<double>(im.height)));
    }
  }
}

TEST(Cli, SynthIsByteReproducible) {
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  ASSERT_EQ(cli("synth --out " + a.string() + " --images 3 --seed 9", a / "log"), 0);
  ASSERT_EQ(cli("synth --out " + b.string() + " --images 3 --seed 9", b / "log"), 0);
  EXPECT_EQ(slurp(a / "manifest.jsonl"), slurp(b / "manifest.jsonl"));
  EXPECT_EQ(slurp(a / "img" / "0002.ppm"), slurp(b / "img" / "0002.ppm"));
  EXPECT_FALSE(slurp(a / "img" / "0002.ppm").empty());
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("codes");
  EXPECT_EQ(cli("", dir / "log"), 1);
  EXPECT_EQ(cli("train --manifest", dir / "log"), 1);
  EXPECT_EQ(cli("eval --manifest " + (dir / "missing.jsonl").string() + " --predictions x", dir / "log"), 2);
  EXPECT_EQ(cli("bench --size 100", dir / "log"), 1);
  EXPECT_EQ(cli("gradcheck --suite mish", dir / "log"), 0);
  EXPECT_EQ(cli("gradcheck --suite no_such_suite", dir / "log"), 2);
}

TEST(Cli, UnknownConfigKeyIsNamed) {
  const auto dir = scratch("badkey");
  ASSERT_EQ(cli("synth --out " + (dir / "data").string() + " --images 2", dir / "log"), 0);
  std::ofstream(dir / "train.cfg") << "epochs = 1\nlearning_rate = 0.1\n";
  EXPECT_EQ(cli("train --manifest " + (dir / "data" / "manifest.jsonl").string() + " --config " +
                    (dir / "train.cfg").string() + " --out " + (dir / "run").string(),
                dir / "log"),
            2);
  EXPECT_NE(slurp(dir / "log").find("learning_rate"), std::string::npos);
}

TEST(Cli, ZeroEpochTrainWritesInitialCheckpoint) {
  const auto dir = scratch("zero");
  ASSERT_EQ(cli("synth --out " + (dir / "data").string() + " --images 2", dir / "log"), 0);
  ASSERT_EQ(cli("train --manifest " + (dir / "data" / "manifest.jsonl").string() + " --epochs 0 --out " +
                    (dir / "run").string(),
                dir / "log"),
            0)
      << slurp(dir / "log");
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint_init.yfck"));
  EXPECT_EQ(slurp(dir / "run" / "checkpoint_init.yfck"), slurp(dir / "run" / "checkpoint_final.yfck"));
}

TEST(Cli, EvalOfPerfectPredictionsIsOne) {
  const auto dir = scratch("perfect");
  ASSERT_EQ(cli("synth --out " + (dir / "data").string() + " --images 4 --seed 2", dir / "log"), 0);
  const auto data = load_manifest(dir / "data" / "manifest.jsonl");
  {
    std::ofstream out(dir / "pred.jsonl");
    for (const auto& r : data.records) {
      nlohmann::json dets = nlohmann::json::array();
      for (const auto& b : r.boxes) dets.push_back({b.box.xmin, b.box.ymin, b.box.xmax, b.box.ymax, b.class_id, 0.9});
      out << nlohmann::json{{"detections", dets}}.dump() << "\n";
    }
  }
  ASSERT_EQ(cli("eval --manifest " + (dir / "data" / "manifest.jsonl").string() + " --predictions " +
                    (dir / "pred.jsonl").string() + " --out " + (dir / "ev").string(),
                dir / "log"),
            0)
      << slurp(dir / "log");
  const auto j = nlohmann::json::parse(slurp(dir / "ev" / "eval.json"));
  EXPECT_DOUBLE_EQ(j.at("map").get<double>(), 1.0);
}
