#include "tadiff/error.hpp"

namespace tadiff {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Input: return "input_error";
        case ErrorKind::Schema: return "schema_error";
        case ErrorKind::Config: return "config_error";
        case ErrorKind::Prerequisite: return "prerequisite_missing";
        case ErrorKind::Numeric: return "numeric_error";
        case ErrorKind::UndefinedMetric: return "undefined_metric";
        case ErrorKind::RareCondition: return "rare_condition";
        case ErrorKind::Io: return "io_error";
    }
    return "error";
}

int exit_code(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Config:
        case ErrorKind::Input:
        case ErrorKind::Schema: return 2;
        case ErrorKind::Prerequisite: return 3;
        case ErrorKind::Numeric: return 4;
        case ErrorKind::UndefinedMetric: return 5;
        default: return 1;
    }
}

}  // namespace tadiff
