#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "sf/bench.hpp"
#include "sf/dataset.hpp"
#include "sf/synth.hpp"
#include "sf/trainer.hpp"

namespace fs = std::filesystem;

namespace {

sf::Config make_config(const std::string& config_path, std::optional<uint64_t> seed,
                       std::optional<int> threads) {
  sf::Config cfg;
  if (!config_path.empty()) cfg = sf::load_config(config_path);
  if (seed) cfg.seed = *seed;
  if (const char* env = std::getenv("SF_THREADS")) cfg.threads = std::max(1, std::atoi(env));
  if (threads) cfg.threads = *threads;
  return cfg;
}

sf::Stage pick_stage(const std::string& run_dir, const std::string& wanted) {
  if (wanted == "recon") return sf::Stage::kRecon;
  if (wanted == "decoder") return sf::Stage::kDecoder;
  if (wanted == "style") return sf::Stage::kStyle;
  // latest available
  for (const sf::Stage s : {sf::Stage::kStyle, sf::Stage::kDecoder, sf::Stage::kRecon}) {
    if (fs::exists(run_dir + "/" + sf::stage_name(s) + std::string(".ckpt"))) return s;
  }
  throw sf::TensorError("no checkpoint found under " + run_dir);
}

void load_stage(sf::Pipeline& pipe, const std::string& run_dir, sf::Stage stage) {
  const std::string path = run_dir + "/" + sf::stage_name(stage) + std::string(".ckpt");
  if (!fs::exists(path)) throw sf::TensorError("missing checkpoint " + path);
  pipe.load_checkpoint(path);
}

std::vector<sf::Camera> orbit_cameras(const sf::SceneDataset& ds, int n) {
  // circle at the first training camera's radius and height, full sweep
  const sf::Camera& c0 = ds.cameras.front();
  const sf::Vec3 center((ds.scene_bounds.lo.x() + ds.scene_bounds.hi.x()) / 2, 0,
                        (ds.scene_bounds.lo.z() + ds.scene_bounds.hi.z()) / 2);
  const double radius = std::hypot(c0.t.x() - center.x(), c0.t.z() - center.z());
  const double height = c0.t.y();
  const sf::Vec3 target(center.x(), height - 0.25, center.z());
  std::vector<sf::Camera> cams;
  for (int i = 0; i < n; ++i) {
    const double th = 2.0 * 3.14159265358979323846 * i / n;
    sf::Camera c = c0;
    const sf::Vec3 pos(center.x() + radius * std::sin(th), height,
                       center.z() + radius * std::cos(th));
    const sf::Vec3 f = (target - pos).normalized();
    sf::Vec3 down(0, -1, 0);
    down = (down - down.dot(f) * f).normalized();
    c.R.col(0) = down.cross(f);
    c.R.col(1) = down;
    c.R.col(2) = f;
    c.t = pos;
    cams.push_back(c);
  }
  return cams;
}

void write_frame(const std::string& dir, const char* stem, int i, const sf::ImageF& img) {
  char name[96];
  std::snprintf(name, sizeof(name), "/%s_%04d.png", stem, i);
  sf::write_png(dir + name, img);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural-field video stylization engine"};
  app.require_subcommand(1);

  std::string config_path, data_dir, run_dir, out_dir;
  std::optional<uint64_t> seed_opt;
  std::optional<int> threads_opt;
  app.add_option("--config", config_path, "config JSON")->each([](const std::string&) {});

  // synth
  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
  uint64_t synth_seed = 7;
  int synth_frames = 16, synth_res = 64;
  std::string synth_out;
  synth->add_option("--seed", synth_seed);
  synth->add_option("--frames", synth_frames);
  synth->add_option("--res", synth_res);
  synth->add_option("--out", synth_out)->required();

  auto add_common = [&](CLI::App* cmd, bool need_run) {
    cmd->add_option("--config", config_path, "config JSON");
    cmd->add_option("--data", data_dir, "dataset directory")->required();
    if (need_run) cmd->add_option("--run", run_dir, "run directory (checkpoints)")->required();
    cmd->add_option("--seed", seed_opt);
    cmd->add_option("--threads", threads_opt);
  };

  auto* train_recon = app.add_subcommand("train-recon", "stage 1: reconstruction");
  add_common(train_recon, true);
  std::optional<int> steps_opt;
  train_recon->add_option("--steps", steps_opt);

  auto* train_decoder = app.add_subcommand("train-decoder", "stage 2: feature decoder");
  add_common(train_decoder, true);
  std::optional<int> dec_steps_opt;
  train_decoder->add_option("--steps", dec_steps_opt);

  auto* train_style = app.add_subcommand("train-style", "stage 3: stylization");
  add_common(train_style, true);
  std::optional<int> style_steps_opt;
  train_style->add_option("--steps", style_steps_opt);

  auto* render = app.add_subcommand("render", "render frames (novel views supported)");
  add_common(render, true);
  std::string render_stage = "latest", cameras_path, dump_planes_dir;
  int orbit_n = 0;
  render->add_option("--out", out_dir)->required();
  render->add_option("--stage", render_stage, "recon|decoder|style|latest");
  render->add_option("--cameras", cameras_path, "cameras.json with an arbitrary path");
  render->add_option("--orbit", orbit_n, "render N cameras on a circular path");
  render->add_option("--dump-planes", dump_planes_dir, "dump encoded planes for debugging");

  auto* animate = app.add_subcommand("animate", "render novel body poses");
  add_common(animate, true);
  std::string poses_path;
  animate->add_option("--out", out_dir)->required();
  animate->add_option("--poses", poses_path, "pose file driving the human")->required();
  animate->add_option("--stage", render_stage);

  auto* stylize = app.add_subcommand("stylize", "stylized rendering of the whole sequence");
  add_common(stylize, true);
  std::string style_path;
  bool dump_alpha = false;
  stylize->add_option("--out", out_dir)->required();
  stylize->add_option("--style", style_path, "style image (PNG)")->required();
  stylize->add_flag("--dump-alpha", dump_alpha, "also write per-frame alpha maps");

  auto* evalc = app.add_subcommand("eval-consistency", "masked warp RMSE over rendered frames");
  add_common(evalc, false);
  std::string renders_dir, report_path = "consistency.json";
  int far_gap = 7;
  evalc->add_option("--renders", renders_dir, "directory with rendered frame_*.png")->required();
  evalc->add_option("--out", report_path);
  evalc->add_option("--gap", far_gap, "far-pair gap");

  auto* bench = app.add_subcommand("bench", "tri-plane vs MLP query throughput");
  int64_t bench_points = 1000000;
  std::string bench_out;
  uint64_t bench_seed = 1;
  bench->add_option("--points", bench_points);
  bench->add_option("--seed", bench_seed);
  bench->add_option("--out", bench_out, "write the report as JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      sf::SynthSpec spec;
      spec.seed = synth_seed;
      spec.n_frames = synth_frames;
      spec.res = synth_res;
      sf::write_synth_dataset(synth_out, spec);
      std::cout << "wrote dataset to " << synth_out << "\n";
      return 0;
    }
    if (*bench) {
      auto r = sf::bench_query(bench_points, bench_seed);
      sf::print_bench_report(r);
      if (!bench_out.empty()) sf::write_bench_report(bench_out, r);
      return 0;
    }

    sf::SceneDataset ds = sf::load_dataset(data_dir);
    sf::Config cfg = make_config(config_path, seed_opt, threads_opt);

    if (*evalc) {
      std::vector<sf::ImageF> rendered;
      for (int i = 0; i < ds.n_frames(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "/frame_%04d.png", i);
        rendered.push_back(sf::read_png(renders_dir + name));
      }
      auto report = sf::eval_consistency(rendered, ds, far_gap);
      std::cout << "adjacent (gap 1) mean RMSE: " << report.adjacent_mean << "\n";
      std::cout << "far (gap " << report.far_gap << ") mean RMSE: " << report.far_mean << "\n";
      std::cout << "overall mean RMSE: " << report.overall_mean << "\n";
      sf::write_consistency_report(report_path, report);
      return 0;
    }

    if (*train_recon && steps_opt) cfg.recon_steps = *steps_opt;
    if (*train_decoder && dec_steps_opt) cfg.decoder_steps = *dec_steps_opt;
    if (*train_style && style_steps_opt) cfg.style_steps = *style_steps_opt;

    sf::Pipeline pipe(cfg, ds);

    if (*train_recon) {
      pipe.train_recon(run_dir);
      std::vector<double> per_frame;
      const double p = pipe.eval_psnr(cfg.heldout_frames, false, &per_frame);
      std::cout << "held-out PSNR: " << p << " dB\n";
      return 0;
    }
    if (*train_decoder) {
      pipe.train_decoder(run_dir);
      return 0;
    }
    if (*train_style) {
      pipe.train_style(run_dir);
      return 0;
    }

    if (*render || *animate || *stylize) {
      fs::create_directories(out_dir);
      const sf::Stage stage = pick_stage(run_dir, *stylize ? "style" : render_stage);
      load_stage(pipe, run_dir, stage);
      const bool rgb_mode = stage == sf::Stage::kRecon;

      std::vector<sf::Camera> cams = ds.cameras;
      std::vector<sf::SkeletonPose> poses = ds.poses.frames;
      bool dataset_cameras = true;
      if (*render && !cameras_path.empty()) {
        cams = sf::load_cameras(cameras_path);
        dataset_cameras = false;
        while (poses.size() < cams.size()) poses.push_back(poses.back());
        poses.resize(cams.size());
      }
      if (*render && orbit_n > 0) {
        cams = orbit_cameras(ds, orbit_n);
        dataset_cameras = false;
        poses.assign(static_cast<size_t>(orbit_n),
                     ds.poses.frames[ds.poses.frames.size() / 2]);
      }
      if (*animate) {
        const sf::PoseSequence seq = sf::load_poses(poses_path);
        poses = seq.frames;
        dataset_cameras = false;
        cams.resize(poses.size(), cams.back());
      }

      std::optional<sf::StyleContext<float>> style_ctx;
      if (*stylize) style_ctx = pipe.make_style_context(sf::read_png(style_path));

      double psnr_acc = 0;
      for (size_t i = 0; i < cams.size(); ++i) {
        sf::ImageF alpha, img;
        if (*stylize) {
          img = pipe.stylize_frame(cams[i], poses[i], *style_ctx, &alpha);
        } else if (rgb_mode) {
          img = pipe.render_rgb_frame(cams[i], poses[i], &alpha);
        } else {
          img = pipe.render_decoded_frame(cams[i], poses[i], &alpha);
        }
        write_frame(out_dir, "frame", static_cast<int>(i), img);
        if (*stylize && dump_alpha) write_frame(out_dir, "alpha", static_cast<int>(i), alpha);
        if (dataset_cameras && i < static_cast<size_t>(ds.n_frames())) {
          const double p = sf::psnr(img, ds.frames[i]);
          psnr_acc += p;
          std::cout << "frame " << i << " PSNR " << p << " dB\n";
        }
      }
      if (dataset_cameras) {
        std::cout << "mean PSNR: " << psnr_acc / static_cast<double>(cams.size()) << " dB\n";
      }
      if (*render && !dump_planes_dir.empty()) {
        sf::dump_planes(pipe.model().scene_field, dump_planes_dir);
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
