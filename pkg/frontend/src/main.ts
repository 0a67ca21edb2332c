import { TriageApi } from "./api";
import { ReviewQueueController } from "./controller";
import { ReviewQueueView } from "./view";

const root = document.getElementById("app");
if (root === null) throw new Error("missing #app mount point");

const controller = new ReviewQueueController(new TriageApi());
new ReviewQueueView(root, controller);
void controller.refresh();
