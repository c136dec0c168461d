#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace sbgru::cli {

/// Entry point shared by the executable and the tests. Returns the process
/// exit status: 0 on success, nonzero on any error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cmd_train(const std::filesystem::path& config, const std::filesystem::path& resume, std::ostream& out);
int cmd_translate(const std::filesystem::path& checkpoint, const std::filesystem::path& input, double tau,
                  std::ostream& out);
int cmd_evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& corpus, double tau,
                 std::ostream& out);
int cmd_compress(const std::filesystem::path& checkpoint, double tau, const std::string& delta_mode, double delta,
                 const std::filesystem::path& out_path, std::ostream& out);
int cmd_inspect(const std::filesystem::path& checkpoint, double tau, std::ostream& out);

}  // namespace sbgru::cli
