import { startApp } from "./app.js";

startApp().catch((err) => {
  console.error("composer failed to start", err);
  const badge = document.getElementById("error-badge");
  if (badge) {
    badge.textContent = `failed to reach the inference service: ${err}`;
    (badge as HTMLElement).style.display = "block";
  }
});
