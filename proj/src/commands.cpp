#include "ssd/commands.hpp"

#include <exception>
#include <fstream>
#include <ostream>
#include <string>

#include "ssd/checkpoint.hpp"
#include "ssd/harness.hpp"
#include "ssd/memory.hpp"
#include "ssd/verify.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

namespace {

void print_violations(const SeedResult& r, std::ostream& err) {
  for (const auto& v : r.violations) err << "seed " << r.seed << ": invariant violated: " << v << '\n';
}

const CheckpointEntry* find_entry(const std::vector<CheckpointEntry>& entries, const std::string& name) {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

}  // namespace

int command_run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const ExperimentResult result = run_experiment(config, config.quiet ? nullptr : &err);
  bool clean = true;
  out << "seed,avg_end,summarize_events,seconds\n";
  for (const auto& r : result.runs) {
    out << r.seed << ',' << format_fixed(r.metrics.average_end()) << ',' << r.summarize_events << ','
        << format_fixed(r.seconds, 1) << '\n';
    print_violations(r, err);
    clean = clean && r.violations.empty();
  }
  out << "mean," << format_fixed(result.average_end.mean) << "\nstd," << format_fixed(result.average_end.stddev)
      << '\n';
  return clean ? kExitOk : kExitCheckFailed;
}

int command_ablate(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const auto rows = ablation_suite(config, config.quiet ? nullptr : &err);
  bool clean = true;
  for (const auto& row : rows) {
    for (const auto& r : row.result.runs) {
      print_violations(r, err);
      clean = clean && r.violations.empty();
    }
  }
  out << ablation_csv(rows);
  return clean ? kExitOk : kExitCheckFailed;
}

int command_dump(const std::filesystem::path& checkpoint, const std::filesystem::path& out_dir, std::ostream& out,
                 std::ostream& err) {
  const auto entries = read_checkpoint(checkpoint);
  const auto* shape_entry = find_entry(entries, "memory.shape");
  const auto* meta = find_entry(entries, "memory.meta");
  if (!shape_entry || !meta || shape_entry->values.size() != 3 || meta->dims.size() != 2 || meta->dims[1] != 3) {
    err << "dump: " << checkpoint.string() << " holds no memory section\n";
    return kExitFailure;
  }
  const ImageShape shape{static_cast<std::int64_t>(shape_entry->values[0]),
                         static_cast<std::int64_t>(shape_entry->values[1]),
                         static_cast<std::int64_t>(shape_entry->values[2])};
  std::filesystem::create_directories(out_dir);
  std::ofstream manifest(out_dir / "manifest.csv", std::ios::trunc);
  manifest << "slot,tag,class,stream_index\n";
  std::size_t written = 0;
  for (std::size_t i = 0; i < meta->dims[0]; ++i) {
    const auto tag = static_cast<SlotTag>(static_cast<int>(meta->values[i * 3]));
    if (tag == SlotTag::Empty) continue;
    const int cls = static_cast<int>(meta->values[i * 3 + 1]);
    const auto index = static_cast<std::int64_t>(meta->values[i * 3 + 2]);
    const auto* image = find_entry(entries, "memory.slot." + std::to_string(i) + ".image");
    if (!image) {
      err << "dump: slot " << i << " has no image\n";
      return kExitFailure;
    }
    const Pixels px(image->values.begin(), image->values.end());
    write_ppm(out_dir / (std::to_string(i) + "_" + slot_tag_name(tag) + "_" + std::to_string(cls) + ".ppm"), px,
              shape);
    manifest << i << ',' << slot_tag_name(tag) << ',' << cls << ',' << index << '\n';
    ++written;
  }
  out << written << " images written to " << out_dir.string() << '\n';
  return kExitOk;
}

int command_verify(std::uint64_t seed, std::ostream& out, std::ostream&) {
  const CheckOutcome checks[] = {verify_gradients(seed), verify_second_order(seed + 1),
                                 verify_identity_collapse(seed + 2), verify_reservoir(seed + 3),
                                 verify_summarization_descent(seed + 4)};
  bool all = true;
  for (const auto& c : checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << " [" << format_fixed(c.seconds, 2)
        << "s]\n";
    all = all && c.passed;
  }
  return all ? kExitOk : kExitCheckFailed;
}

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
