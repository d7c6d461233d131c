// icsml-stgen: manifest -> Structured Text project files.

#include <iostream>

#include <CLI11.hpp>

#include "icsml/model_io.hpp"
#include "icsml/st_codegen.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate IEC 61131-3 Structured Text for a model manifest"};
  std::string manifest_path;
  std::string out_dir = ".";
  std::string name;
  bool list_only = false;
  app.add_option("--manifest", manifest_path, "model manifest (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--name", name, "override the program name");
  app.add_flag("--list", list_only, "print file names without writing");
  CLI11_PARSE(app, argc, argv);

  try {
    auto manifest = icsml::load_manifest(manifest_path);
    if (!name.empty()) manifest.name = name;
    icsml::validate_manifest(manifest);
    const auto project = icsml::st::emit_st_project(manifest);
    for (const auto& [file, text] : project.files) std::cout << file << " (" << text.size() << " bytes)\n";
    if (!list_only) icsml::st::write_project(project, out_dir);
  } catch (const icsml::Error& e) {
    std::cerr << "icsml-stgen: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
