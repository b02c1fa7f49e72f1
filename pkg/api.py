from flask import Flask, jsonify, request
import os
import logging
import traceback
from flask_cors import CORS
from dotenv import load_dotenv
from errors import ParseError, ValidationError
from services import compare_overhead
from sim_engine import MODES, run as run_simulation
from utils.report_writer import render_comparison, render_report
from utils.scenario_loader import (
    SCENARIO_DIR,
    dump_scenario,
    list_scenarios,
    load_scenario,
    parse_scenario_text,
)

# Load environment variables
load_dotenv()

# Configure logging
logging.basicConfig(
    level=os.getenv("HAMANET_LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger("api")

app = Flask(__name__)
CORS(app)


class RequestError(Exception):
    pass


def _scenario_from_request(data):
    """A scenario comes inline ("scenario": YAML text) or by bundled file name ("name")."""
    if not data or ("scenario" not in data and "name" not in data):
        raise RequestError("Missing required field: scenario or name")
    if "scenario" in data:
        return parse_scenario_text(str(data["scenario"]), source="request")
    name = str(data["name"])
    if name not in list_scenarios():
        raise RequestError(f"Unknown scenario '{name}'")
    return load_scenario(os.path.join(SCENARIO_DIR, name))


def _invalid(e):
    body = {"success": False, "error": str(e)}
    if isinstance(e, ValidationError):
        body["issues"] = [{"path": path, "message": message} for path, message in e.issues]
    if isinstance(e, ParseError):
        body["line"] = e.line
    return jsonify(body), 400


def _seed(data):
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise RequestError("seed must be an integer")
    return seed


@app.route("/api/scenarios", methods=["GET"])
def get_scenarios():
    try:
        return jsonify({"success": True, "scenarios": list_scenarios()})
    except Exception as e:
        return jsonify({"success": False, "error": str(e)}), 500


@app.route("/api/validate", methods=["POST"])
def validate():
    try:
        scenario = _scenario_from_request(request.json)
        return jsonify(
            {
                "success": True,
                "name": scenario.name,
                "nodes": len(scenario.topology.nodes),
                "edges": len(scenario.topology.edges),
                "steps": len(scenario.steps),
                "canonical": dump_scenario(scenario),
            }
        )
    except RequestError as e:
        return jsonify({"success": False, "error": str(e)}), 400
    except (ParseError, ValidationError) as e:
        return _invalid(e)
    except Exception as e:
        logger.error(f"Validation failed: {e}")
        logger.debug(traceback.format_exc())
        return jsonify({"success": False, "error": str(e)}), 500


@app.route("/api/run", methods=["POST"])
def run():
    try:
        data = request.json
        scenario = _scenario_from_request(data)
        seed = _seed(data)
        mode = data.get("mode", "hamanet")
        if mode not in MODES:
            return jsonify({"success": False, "error": f"mode must be one of {list(MODES)}"}), 400

        metrics, trace = run_simulation(scenario, seed, mode)
        response = {
            "success": True,
            "conservation": metrics.conservation_holds(),
            "metrics": metrics.as_dict(),
            "report": render_report(metrics, scenario.name, seed, mode),
        }
        if data.get("include_trace"):
            response["trace"] = trace
        return jsonify(response)
    except RequestError as e:
        return jsonify({"success": False, "error": str(e)}), 400
    except (ParseError, ValidationError) as e:
        return _invalid(e)
    except Exception as e:
        logger.error(f"Run failed: {e}")
        logger.debug(traceback.format_exc())
        return jsonify({"success": False, "error": str(e)}), 500


@app.route("/api/compare", methods=["POST"])
def compare():
    try:
        data = request.json
        scenario = _scenario_from_request(data)
        seed = _seed(data)
        messages = data.get("messages", 0)
        if not isinstance(messages, int) or messages < 0:
            return jsonify({"success": False, "error": "messages must be a non-negative integer"}), 400

        report = compare_overhead(scenario, seed, messages)
        return jsonify(
            {
                "success": True,
                "hamanet_total_tx": report.hamanet.total_tx,
                "baseline_total_tx": report.baseline.total_tx,
                "hamanet_wins": report.hamanet_wins,
                "crossover": report.crossover,
                "scan": [{"k": k, "hamanet": h, "baseline": b} for k, h, b in report.scan],
                "report": render_comparison(report, scenario.name, seed),
            }
        )
    except RequestError as e:
        return jsonify({"success": False, "error": str(e)}), 400
    except (ParseError, ValidationError) as e:
        return _invalid(e)
    except Exception as e:
        logger.error(f"Comparison failed: {e}")
        logger.debug(traceback.format_exc())
        return jsonify({"success": False, "error": str(e)}), 500


if __name__ == "__main__":
    port = int(os.environ.get("HAMANET_API_PORT", 5000))
    app.run(host="0.0.0.0", port=port, debug=True)
