#include "ssd/harness.hpp"

#include <chrono>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <unordered_set>

#include "ssd/autograd.hpp"
#include "ssd/checkpoint.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

SyntheticSpec synthetic_spec(const RunConfig& c) {
  SyntheticSpec s;
  s.num_classes = c.synthetic_classes;
  s.per_class = c.synthetic_per_class;
  s.test_per_class = c.synthetic_test_per_class;
  s.shape = ImageShape{c.image_channels, c.image_size, c.image_size};
  s.seed = c.synthetic_seed;
  s.noise = c.synthetic_noise;
  return s;
}

std::filesystem::path test_cache_path(const std::string& cache) { return cache + ".test"; }

}  // namespace

Dataset load_dataset(const RunConfig& config) {
  if (config.dataset == "cifar100") return load_cifar100(config.data_path);
  const SyntheticSpec spec = synthetic_spec(config);
  if (!config.synthetic_cache.empty()) {
    const std::filesystem::path train = config.synthetic_cache;
    const auto test = test_cache_path(config.synthetic_cache);
    const std::int64_t n_train = static_cast<std::int64_t>(spec.num_classes) * spec.per_class;
    const std::int64_t n_test = static_cast<std::int64_t>(spec.num_classes) * spec.test_per_class;
    std::error_code ec;
    if (std::filesystem::exists(train, ec) && std::filesystem::exists(test, ec)) {
      Dataset d;
      d.shape = spec.shape;
      d.num_classes = spec.num_classes;
      d.train = read_cifar_records(train, spec.shape, n_train);
      d.test = read_cifar_records(test, spec.shape, n_test);
      return d;
    }
    Dataset d = generate_synthetic(spec);
    write_cifar_records(train, d.train, spec.shape);
    write_cifar_records(test, d.test, spec.shape);
    return d;
  }
  return generate_synthetic(spec);
}

LearnerConfig learner_config(const RunConfig& c) {
  LearnerConfig l;
  l.backbone = c.backbone == "convnet3" ? Backbone::ConvNet3 : Backbone::ReducedResNet18;
  l.width = c.learner_width;
  l.lr = c.learner_lr;
  l.lambda = c.lambda;
  l.mode = c.learner_mode == "scr" ? LearnerMode::SCR : LearnerMode::ER;
  l.replays_per_iter = c.replays_per_iter;
  l.temperature = c.temperature;
  l.augment = c.augment;
  return l;
}

SummarizerConfig summarizer_config(const RunConfig& c) {
  SummarizerConfig s;
  s.width = c.summarizer_width;
  s.model_lr = c.summarizer_lr;
  s.model_momentum = c.summarizer_momentum;
  s.pixel_lr = c.pixel_lr;
  s.pixel_momentum = c.pixel_momentum;
  s.interval = c.tau;
  s.gamma = c.gamma;
  s.summarize = c.summarize;
  s.past_assist = c.past_assist;
  return s;
}

std::vector<std::string> check_invariants(const RunConfig& config, const RunState& state) {
  std::vector<std::string> out;
  const MemoryBuffer& m = *state.memory;
  if (m.filled() > m.capacity()) out.push_back("memory holds more filled slots than its capacity");
  if (state.queue_leaks != 0) {
    out.push_back(std::to_string(state.queue_leaks) + " replayed examples were not resident in memory");
  }
  if (config.dynamic_memory) {
    const int k = m.per_class_budget();
    for (const auto& task : state.tasks.tasks) {
      for (int c : task.classes) {
        if (!m.initialized(c)) continue;
        const auto n = m.summarized_of(c).size();
        if (n != static_cast<std::size_t>(k)) {
          out.push_back("class " + std::to_string(c) + " owns " + std::to_string(n) + " summarized slots, expected " +
                        std::to_string(k));
        }
      }
    }
    if (m.count(SlotTag::Summarized) != static_cast<std::int64_t>(m.initialized_classes().size()) * k) {
      out.push_back("summarized slot total does not equal k times the initialized classes");
    }
  } else if (m.count(SlotTag::Summarized) != 0) {
    out.push_back("summarized slots present without dynamic memory");
  }
  return out;
}

SeedResult run_seed(const RunConfig& config, const Dataset& dataset, std::uint64_t seed, RunState* keep,
                    const IterationHook& hook, std::ostream* log) {
  config.check();
  const auto t0 = Clock::now();
  const SeedSplitter seeds(seed);
  RunState local;
  RunState& st = keep ? *keep : local;
  st = RunState{};
  st.tasks = make_tasks(dataset, config.num_tasks, seeds.derive("tasks"));
  st.memory = std::make_unique<MemoryBuffer>(config.dynamic_memory
                                                 ? MemoryBuffer(config.memory_size, dataset.num_classes)
                                                 : MemoryBuffer::reservoir_only(config.memory_size));
  st.queue = std::make_unique<RecentQueue>(static_cast<std::size_t>(config.queue_capacity));
  if (config.dynamic_memory) {
    st.summarizer = std::make_unique<Summarizer>(summarizer_config(config), dataset.shape, dataset.num_classes,
                                                 st.memory->per_class_budget(), seeds.derive("summarizer"));
  }
  st.learner = std::make_unique<Learner>(learner_config(config), dataset.shape, dataset.num_classes,
                                         seeds.derive("learner"));
  st.metrics = MetricsRecord(config.num_tasks);
  Rng reservoir_rng = seeds.stream("reservoir");
  Rng replay_rng = seeds.stream("replay");
  const bool scr = config.learner_mode == "scr";

  std::int64_t iteration = 0;
  for (int t = 0; t < config.num_tasks; ++t) {
    const Task& task = st.tasks.tasks[static_cast<std::size_t>(t)];
    auto stream = stream_batches(task, static_cast<std::size_t>(config.stream_batch));
    while (auto batch = stream.next()) {
      ++iteration;
      std::unordered_set<std::int64_t> seeded;
      if (st.summarizer) {
        st.summarizer->maybe_summarize(*st.memory, *st.queue, *batch);
        seeded.insert(st.summarizer->last_seed_indices().begin(), st.summarizer->last_seed_indices().end());
      }
      for (const auto& e : *batch) {
        if (!seeded.contains(e.stream_index)) st.memory->reservoir_update(e, reservoir_rng);
      }
      if (st.summarizer && config.summarize) {
        st.summarizer->update_model(*batch, st.memory->examples_at(st.memory->originals()));
      }
      const auto replay = st.memory->sample_replay_batch(static_cast<std::size_t>(config.replay_batch), replay_rng);
      std::unordered_set<const Pixels*> resident;
      for (const auto& s : st.memory->slots()) {
        if (s.tag != SlotTag::Empty) resident.insert(s.example.pixels.get());
      }
      for (const auto& e : replay) {
        if (!resident.contains(e.pixels.get())) ++st.queue_leaks;
      }
      st.learner->train_step(*batch, replay);
      st.learner->replay_repeat(*st.memory, replay_rng, static_cast<std::size_t>(config.replay_batch));
      if (hook) hook(st, t, iteration);
    }
    const ClassMeans means = scr ? st.learner->class_means(*st.memory) : ClassMeans{};
    for (int u = 0; u <= t; ++u) {
      const auto& test = st.tasks.tasks[static_cast<std::size_t>(u)].test;
      st.metrics.set(t, u, st.learner->accuracy(test, scr && !means.empty() ? &means : nullptr));
    }
    if (log && !config.quiet) {
      *log << "seed " << seed << " task " << t + 1 << "/" << config.num_tasks << " acc";
      for (int u = 0; u <= t; ++u) *log << ' ' << format_fixed(st.metrics.at(t, u), 3);
      *log << "  (" << format_fixed(seconds_since(t0), 1) << "s)\n";
    }
  }

  SeedResult r;
  r.seed = seed;
  r.metrics = st.metrics;
  r.memory = st.memory->stats();
  r.capacity = st.memory->capacity();
  r.filled = st.memory->filled();
  r.summarized_slots = st.memory->count(SlotTag::Summarized);
  r.queue_leaks = st.queue_leaks;
  if (st.summarizer) {
    r.summarize_events = static_cast<std::int64_t>(st.summarizer->trace().size());
    r.reinit_count = st.summarizer->reinit_count();
  }
  r.violations = check_invariants(config, st);
  r.seconds = seconds_since(t0);
  return r;
}

void save_run_checkpoint(const std::filesystem::path& file, RunState& state, ImageShape shape) {
  auto entries = export_state(state.learner->network(), "learner.");
  if (auto* head = state.learner->head()) {
    for (const auto& p : head->named_parameters()) {
      const auto d = p.tensor.data();
      entries.push_back({"learner." + p.name, {p.tensor.shape().begin(), p.tensor.shape().end()},
                         std::vector<float>(d.begin(), d.end())});
    }
  }
  entries.push_back({"memory.shape",
                     {3},
                     {static_cast<float>(shape.channels), static_cast<float>(shape.height),
                      static_cast<float>(shape.width)}});
  const auto& slots = state.memory->slots();
  std::vector<float> meta;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    meta.push_back(static_cast<float>(static_cast<int>(slots[i].tag)));
    meta.push_back(static_cast<float>(slots[i].example.label));
    meta.push_back(static_cast<float>(slots[i].example.stream_index));
    if (slots[i].tag != SlotTag::Empty) {
      const auto& px = *slots[i].example.pixels;
      entries.push_back({"memory.slot." + std::to_string(i) + ".image",
                         {static_cast<std::uint64_t>(shape.channels), static_cast<std::uint64_t>(shape.height),
                          static_cast<std::uint64_t>(shape.width)},
                         std::vector<float>(px.begin(), px.end())});
    }
  }
  entries.push_back({"memory.meta", {slots.size(), 3}, std::move(meta)});
  write_checkpoint(file, entries);
}

ExperimentResult run_experiment(const RunConfig& config, std::ostream* log) {
  config.check();
  const Dataset dataset = load_dataset(config);
  if (log && !config.quiet) {
    *log << "estimated cost: ~" << format_fixed(estimate_cost_seconds(config, dataset), 0) << "s for "
         << config.seeds.size() << " seed(s)\n";
  }
  std::filesystem::path out;
  if (!config.output_dir.empty()) {
    out = resolve_output_dir(config.output_dir);
    std::filesystem::create_directories(out);
    std::ofstream cfg(out / "config.txt", std::ios::trunc);
    for (const auto& [k, v] : config.to_map()) cfg << k << " = " << v << '\n';
  }
  ExperimentResult result;
  std::vector<double> ends;
  for (auto seed : config.seeds) {
    RunState state;
    SeedResult r = run_seed(config, dataset, seed, &state, {}, log);
    if (!out.empty()) {
      const auto dir = out / ("seed_" + std::to_string(seed));
      std::filesystem::create_directories(dir);
      r.metrics.write_csv(dir / "metrics.csv");
      if (config.write_trace && state.summarizer) {
        std::ofstream trace(dir / "trace.csv", std::ios::trunc);
        trace << "n,class,grad_loss,relation_loss,total_loss\n";
        for (const auto& ev : state.summarizer->trace()) {
          trace << ev.iteration << ',' << ev.cls << ',' << format_fixed(ev.grad_loss, 9) << ','
                << format_fixed(ev.relation_loss, 9) << ',' << format_fixed(ev.total_loss, 9) << '\n';
        }
      }
      if (config.dump_memory) dump_memory(*state.memory, dataset.shape, dir / "memory");
      if (config.save_checkpoint) save_run_checkpoint(dir / "checkpoint.ssdc", state, dataset.shape);
    }
    ends.push_back(r.metrics.average_end());
    result.runs.push_back(std::move(r));
  }
  result.average_end = summarize(ends);
  if (!out.empty()) {
    std::ofstream summary(out / "summary.csv", std::ios::trunc);
    summary << "seed,avg_end\n";
    for (const auto& r : result.runs) summary << r.seed << ',' << format_fixed(r.metrics.average_end()) << '\n';
    summary << "mean," << format_fixed(result.average_end.mean) << "\nstd," << format_fixed(result.average_end.stddev)
            << '\n';
  }
  return result;
}

std::vector<AblationRow> ablation_suite(const RunConfig& config, std::ostream* log) {
  struct Flags {
    const char* name;
    bool d, s, p;
  };
  const Flags table[] = {{"none", false, false, false}, {"D", true, false, false}, {"D+S", true, true, false},
                         {"D+S+P", true, true, true}};
  std::vector<AblationRow> rows;
  for (const auto& f : table) {
    RunConfig c = config;
    c.dynamic_memory = f.d;
    c.summarize = f.s;
    c.past_assist = f.p;
    if (!config.output_dir.empty()) c.output_dir = (std::filesystem::path(config.output_dir) / f.name).string();
    if (log && !config.quiet) *log << "== " << f.name << " ==\n";
    rows.push_back({f.name, f.d, f.s, f.p, run_experiment(c, log)});
  }
  if (!config.output_dir.empty()) {
    const auto out = resolve_output_dir(config.output_dir);
    std::filesystem::create_directories(out);
    std::ofstream csv(out / "ablation.csv", std::ios::trunc);
    csv << ablation_csv(rows);
  }
  return rows;
}

double estimate_cost_seconds(const RunConfig& config, const Dataset& dataset) {
  if (dataset.train.empty()) return 0;
  const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(config.stream_batch), dataset.train.size());
  const std::span<const Example> batch(dataset.train.data(), b);
  const double iterations = static_cast<double>(dataset.train.size()) / static_cast<double>(config.stream_batch);

  Learner learner(learner_config(config), dataset.shape, dataset.num_classes, 0);
  auto t0 = Clock::now();
  learner.train_step(batch, batch);
  const double learner_step = seconds_since(t0) * config.replays_per_iter *
                              std::max(1.0, static_cast<double>(config.replay_batch) / static_cast<double>(b) / 2.0 + 0.5);
  double per_iteration = learner_step;
  if (config.dynamic_memory && config.summarize) {
    Summarizer s(summarizer_config(config), dataset.shape, dataset.num_classes,
                 per_class_budget(config.memory_size, dataset.num_classes), 0);
    t0 = Clock::now();
    s.update_model(batch, {});
    per_iteration += seconds_since(t0);
    const std::vector<Example> one(batch.begin(), batch.begin() + 1);
    std::vector<Example> real(static_cast<std::size_t>(config.queue_capacity), batch.front());
    for (auto& e : real) e.label = batch.front().label;
    Tensor syn = stack_images(one, dataset.shape, true);
    t0 = Clock::now();
    {
      GradModeGuard on(true);
      double lg = 0, lr = 0;
      Tensor loss = s.summarize_loss(syn, one.front().label, stack_images(real, dataset.shape), Tensor(), &lg, &lr);
      grad(loss, std::vector<Tensor>{syn});
    }
    const double classes_per_batch = std::min<double>(static_cast<double>(b),
                                                      static_cast<double>(dataset.num_classes) / config.num_tasks);
    per_iteration += seconds_since(t0) * classes_per_batch / config.tau;
  }
  return per_iteration * iterations * static_cast<double>(config.seeds.size());
}

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
