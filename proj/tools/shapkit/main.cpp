#include <iostream>

#include "CLI11.hpp"
#include "shapkit/errors.hpp"
#include "support.hpp"

int main(int argc, char** argv) {
  CLI::App app{"shapkit: Shapley attributions for small vision transformers"};
  app.require_subcommand(1);
  shapkit::cli::register_train_commands(app);
  shapkit::cli::register_attribution_commands(app);
  shapkit::cli::register_evaluation_commands(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const shapkit::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const shapkit::CapabilityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const shapkit::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const shapkit::TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 3;
  } catch (const shapkit::DomainError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
