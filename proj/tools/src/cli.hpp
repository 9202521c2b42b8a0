#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "biskip/data.hpp"
#include "biskip/trainer.hpp"

namespace biskip::cli {

// Stable process exit codes.
enum ExitCode : int {
    kOk = 0,
    kConfigError = 1,  // bad config, flags or checkpoint
    kDataError = 2,    // unreadable data, bad image, size/divisibility problems
    kNumericError = 3, // training or fitting diverged
    kInternalError = 4,
};

// Maps an exception thrown by the library to its exit code.
int exit_code_for(const std::exception& e);

// Flat key=value settings with section prefixes ("train.lr0"). Every key
// has a default; setting an unknown key throws SpecError.
class Settings {
public:
    static Settings defaults();
    static bool known(std::string_view key);

    // `#` starts a comment; blank lines are ignored.
    void merge_file(const std::filesystem::path& path);
    void merge_text(std::string_view text, const std::string& origin = "<text>");
    // "key=value".
    void assign(std::string_view assignment);
    void set(const std::string& key, const std::string& value);

    const std::string& get(const std::string& key) const;
    double real(const std::string& key) const;
    int integer(const std::string& key) const;
    std::uint64_t seed(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::vector<int> int_list(const std::string& key) const;

    // Sorted "key=value" lines; feeding them back through merge_text gives
    // the same settings.
    std::string to_text() const;
    nlohmann::json to_json() const;
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

GeneratorSpec generator_spec(const Settings& s);
// train.scheme may carry a variant suffix ("SA1P-BS"); it overrides model.variant.
TrainConfig train_config(const Settings& s);
DeepPriorConfig prior_config(const Settings& s);
SynthOptions synth_options(const Settings& s);
// Rewrites train.scheme to its full "<scheme>-<variant>" form and
// model.variant to match.
void normalize(Settings& s);

// <root>/<command>-YYYYmmdd-HHMMSS, with -2, -3, ... appended on collision.
std::filesystem::path make_run_dir(const std::filesystem::path& root, std::string_view command,
                                   std::chrono::system_clock::time_point now = std::chrono::system_clock::now());
// $BISKIP_RUN_DIR, or "runs" when unset.
std::filesystem::path run_root();

std::string version_string();

// Entry point behind the `biskip` executable; args excludes argv[0].
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace biskip::cli
