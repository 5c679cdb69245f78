#include <gtest/gtest.h>

#include <filesystem>

#include "histoprog/common/config.hpp"
#include "histoprog/common/csv.hpp"
#include "histoprog/common/error.hpp"
#include "histoprog/common/png_io.hpp"
#include "histoprog/common/svg.hpp"

namespace fs = std::filesystem;
using namespace histoprog;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "histoprog_common_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Config, RejectsUnknownKeys) {
  KeyValueConfig cfg;
  cfg.declare("mt.lr", "0.001");
  cfg.set_assignment("mt.lr=0.05");
  EXPECT_DOUBLE_EQ(cfg.get_double("mt.lr"), 0.05);
  EXPECT_THROW(cfg.set("mt.nope", "1"), ValidationError);
  EXPECT_THROW(cfg.load_text("# c\nbogus=1\n"), ValidationError);
}

TEST(Config, ResolvedIsSorted) {
  KeyValueConfig cfg;
  cfg.declare("b", "2");
  cfg.declare("a", "1");
  EXPECT_EQ(cfg.resolved(), "a=1\nb=2\n");
}

TEST(Config, ListsAndTypes) {
  KeyValueConfig cfg;
  cfg.declare("f", "12.5,25");
  cfg.declare("n", "7");
  cfg.declare("flag", "true");
  EXPECT_EQ(cfg.get_double_list("f"), (std::vector<double>{12.5, 25}));
  EXPECT_EQ(cfg.get_int("n"), 7);
  EXPECT_TRUE(cfg.get_bool("flag"));
  cfg.set("n", "x");
  EXPECT_THROW(cfg.get_int("n"), ValidationError);
}

TEST(Csv, RoundTrip) {
  CsvTable t{{"a", "b"}, {}};
  t.add_row({"1", fmt(0.5, 3)});
  EXPECT_THROW(t.add_row({"1"}), ValidationError);
  auto back = parse_csv(t.str());
  EXPECT_EQ(back.header, t.header);
  EXPECT_EQ(back.rows, t.rows);
  EXPECT_EQ(back.column("b"), 1u);
}

TEST(Csv, FormatsNegativeZero) {
  EXPECT_EQ(fmt(-1e-12, 3), "0.000");
  EXPECT_EQ(fmt(-0.25, 2), "-0.25");
}

TEST(Png, RgbRoundTrip) {
  Image8 img{5, 3, 3, {}};
  for (std::size_t i = 0; i < 45; ++i) img.data.push_back(static_cast<std::uint8_t>(i * 5));
  auto path = scratch("rgb.png");
  write_png(path, img);
  auto back = read_png(path);
  EXPECT_EQ(back.width, 5u);
  EXPECT_EQ(back.height, 3u);
  EXPECT_EQ(back.data, img.data);
}

TEST(Png, IndexedRoundTrip) {
  std::vector<Rgb8> palette = {{0, 255, 0}, {255, 0, 0}, {255, 255, 255}};
  std::vector<std::uint8_t> idx = {0, 1, 2, 2, 1, 0};
  auto path = scratch("idx.png");
  write_indexed_png(path, 3, 2, idx, palette);
  std::size_t w = 0, h = 0;
  std::vector<Rgb8> pal;
  auto back = read_indexed_png(path, w, h, pal);
  EXPECT_EQ(w, 3u);
  EXPECT_EQ(h, 2u);
  ASSERT_EQ(back.size(), idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(pal[back[i]], palette[idx[i]]);
}

TEST(Png, MissingFileNamesPath) {
  try {
    read_png("/nonexistent/x.png");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/x.png"), std::string::npos);
  }
}

TEST(Svg, Deterministic) {
  PlotSpec spec{"KM", "months", "S(t)", {{"low", {0, 1, 2}, {1, 0.5, 0.25}, true}}};
  auto a = render_svg(spec);
  EXPECT_EQ(a, render_svg(spec));
  EXPECT_NE(a.find("<polyline"), std::string::npos);
}
