#include <cstdio>
#include <fstream>

#include "textpix/training.hpp"

namespace textpix {

std::string format_metric(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void write_metrics_csv(const std::vector<EpochMetrics>& history,
                       const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open metrics file for writing: " + path.string());
    out << "epoch,loss_total,loss_l0,loss_pixel,train_acc,val_acc\n";
    for (const auto& row : history) {
        out << row.epoch << ',' << format_metric(row.loss_total) << ','
            << format_metric(row.loss_l0) << ',' << format_metric(row.loss_pixel) << ','
            << format_metric(row.train_acc) << ',';
        if (row.val_acc) out << format_metric(*row.val_acc);
        out << '\n';
    }
    if (!out) throw IoError("failed writing metrics file: " + path.string());
}

void write_sweep_csv(const SweepResult& result, const std::filesystem::path& runs_csv,
                     const std::filesystem::path& summary_csv) {
    {
        std::ofstream out(runs_csv, std::ios::binary);
        if (!out) throw IoError("cannot open sweep file for writing: " + runs_csv.string());
        out << "lambda,run,epochs,val_acc\n";
        for (const auto& row : result.runs) {
            out << format_metric(row.lambda) << ',' << row.run << ',' << row.epochs << ','
                << format_metric(row.val_acc) << '\n';
        }
        if (!out) throw IoError("failed writing sweep file: " + runs_csv.string());
    }
    {
        std::ofstream out(summary_csv, std::ios::binary);
        if (!out) throw IoError("cannot open sweep summary for writing: " + summary_csv.string());
        out << "lambda,val_acc_mean,val_acc_std,pixel_mse_mean\n";
        for (const auto& row : result.summary) {
            out << format_metric(row.lambda) << ',' << format_metric(row.val_acc_mean) << ','
                << format_metric(row.val_acc_std) << ',' << format_metric(row.pixel_mse_mean)
                << '\n';
        }
        if (!out) throw IoError("failed writing sweep summary: " + summary_csv.string());
    }
}

}  // namespace textpix
