#ifndef CDNZ_TRAINING_LOG_H_
#define CDNZ_TRAINING_LOG_H_

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cdnz {

struct TrainingRecord {
  int64_t iteration = 0;
  double loss = 0;       // total objective
  double loss_d = 0;     // reconstruction term
  double loss_h = 0;     // high-level term (unweighted)
  double lr = 0;
};

struct TrainingLog {
  std::vector<TrainingRecord> records;
  // Set by head pretraining: metric on held-out clean data at the end.
  double final_metric = 0;

  bool empty() const { return records.empty(); }
  // Means of consecutive non-overlapping windows of the total loss.
  std::vector<double> WindowMeans(size_t window) const;
  // Tab-separated: iteration loss loss_d loss_h lr, with a header row.
  void WriteTsv(const std::filesystem::path& path) const;
};

}  // namespace cdnz

#endif  // CDNZ_TRAINING_LOG_H_
