#include "cdnz/training_log.h"

#include <cstdio>
#include <fstream>

#include "cdnz/errors.h"

namespace cdnz {

std::vector<double> TrainingLog::WindowMeans(size_t window) const {
  std::vector<double> out;
  if (window == 0) return out;
  for (size_t start = 0; start + window <= records.size(); start += window) {
    double acc = 0;
    for (size_t i = start; i < start + window; ++i) acc += records[i].loss;
    out.push_back(acc / static_cast<double>(window));
  }
  return out;
}

void TrainingLog::WriteTsv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FileNotFound("cannot create log '" + path.string() + "'");
  out << "iteration\tloss\tloss_d\tloss_h\tlr\n";
  char buf[160];
  for (const TrainingRecord& r : records) {
    std::snprintf(buf, sizeof(buf), "%lld\t%.9g\t%.9g\t%.9g\t%.9g\n", static_cast<long long>(r.iteration), r.loss,
                  r.loss_d, r.loss_h, r.lr);
    out << buf;
  }
}

}  // namespace cdnz
