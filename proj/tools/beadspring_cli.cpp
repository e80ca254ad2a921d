#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "beadspring/io.hpp"

namespace {

constexpr const char* kUsage =
    "usage: beadspring <subcommand> [which] --config <file> [--out <dir>]\n"
    "\n"
    "subcommands:\n"
    "  simulate                 one trajectory -> trajectory.csv\n"
    "  ensemble                 n trajectories -> ensemble.json\n"
    "  control                  plan + synthesized control -> plan.json, control.csv,\n"
    "                           tracking.json\n"
    "  diagnose <which>         one of hookean | escape | drift | hormander |\n"
    "                           converge | tube -> <which>.json\n"
    "\n"
    "options:\n"
    "  --config <file>          run configuration (required)\n"
    "  --out <dir>              output directory (overrides config and env)\n"
    "  --echo                   print the fully-resolved config and exit\n"
    "\n"
    "Every run also writes manifest.txt (the resolved config of record).\n"
    "BEADSPRING_OUT sets the default output directory when the config does\n"
    "not name one.\n";

int fail_json(const std::string& msg) {
  beadspring::Json j;
  j["error"] = msg;
  std::cout << j.dump() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace beadspring;
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty()) {
    std::cerr << kUsage;
    return 1;
  }
  if (args[0] == "--help" || args[0] == "-h") {
    std::cout << kUsage;
    return 0;
  }

  const std::string sub = args[0];
  std::string which, config_path, out_override;
  bool echo_only = false;
  std::size_t i = 1;
  if (sub == "diagnose" && i < args.size() && !args[i].empty() && args[i][0] != '-')
    which = args[i++];
  for (; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      config_path = args[++i];
    else if (args[i] == "--out" && i + 1 < args.size())
      out_override = args[++i];
    else if (args[i] == "--echo")
      echo_only = true;
    else
      return fail_json("unrecognized argument '" + args[i] + "'");
  }
  if (config_path.empty()) return fail_json("missing --config <file>");

  std::ifstream in(config_path, std::ios::binary);
  if (!in) return fail_json("cannot read config file '" + config_path + "'");
  std::stringstream buf;
  buf << in.rdbuf();

  try {
    const RunConfig cfg = parse_config(buf.str());
    if (out_override.empty() && !cfg.out_dir_set)
      if (const char* env = std::getenv("BEADSPRING_OUT")) out_override = env;
    if (echo_only) {
      std::cout << echo_config(cfg);
      return 0;
    }
    const DispatchResult res = dispatch(sub, cfg, which, out_override);
    for (const auto& p : res.artifacts) std::cout << "wrote " << p << "\n";
    return 0;
  } catch (const std::exception& e) {
    return fail_json(e.what());
  }
}
